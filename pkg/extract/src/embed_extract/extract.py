"""Batch image-embedding extraction into the CEF file format.

Walks an image directory tree (one subdirectory per class, or a flat
directory for unlabeled data), runs a vision checkpoint over the images, and
writes L2-normalized float32 embeddings. Class ids are assigned by sorted
subdirectory name, so alphabetical order defines the id space; the
`drop_last_classes` knob rebuilds the usual "last n classes unseen" split by
omitting those classes from the output (used when producing a source file).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger("embed_extract")

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".webp", ".gif", ".tiff"}

CEF_MAGIC = b"CEF1"

# Standard ImageNet-style preprocessing.
INPUT_SIZE = 224
CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


@dataclass
class ExtractionManifest:
    """What to run, over what, and where the embeddings go."""

    checkpoint: str  # e.g. "torchvision:resnet18" or "hf-clip:<model-id>"
    image_root: Path
    output_path: Path
    label_mode: str = "from-subdirs"  # or "none"
    batch_size: int = 32
    device: str = "cpu"
    weights: str | None = None  # None (random init), "default", or a state-dict path
    drop_last_classes: int = 0
    seed: int = 0

    def __post_init__(self):
        self.image_root = Path(self.image_root)
        self.output_path = Path(self.output_path)
        if self.label_mode not in ("from-subdirs", "none"):
            raise ValueError(f"label_mode must be 'from-subdirs' or 'none', got {self.label_mode!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.drop_last_classes and self.label_mode != "from-subdirs":
            raise ValueError("drop_last_classes requires label_mode='from-subdirs'")


@dataclass
class ExtractionResult:
    written: int
    skipped: list[str] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)


def write_cef(path: Path, vectors: np.ndarray, labels: np.ndarray | None) -> None:
    """Write the CEF wire format: magic, u32 n, u32 d, u8 flag, f32 rows, u32 labels."""
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    n, d = vectors.shape
    header = CEF_MAGIC + struct.pack("<IIB", n, d, int(labels is not None))
    payload = vectors.tobytes(order="C")
    if labels is not None:
        payload += np.ascontiguousarray(labels, dtype="<u4").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + payload)


def list_images(manifest: ExtractionManifest) -> tuple[list[Path], np.ndarray | None, list[str]]:
    """Collect image paths and, in from-subdirs mode, their class labels."""
    root = manifest.image_root
    if not root.is_dir():
        raise FileNotFoundError(f"image root {root} is not a directory")

    def images_in(directory: Path) -> list[Path]:
        return sorted(
            p for p in directory.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )

    if manifest.label_mode == "none":
        return images_in(root), None, []

    class_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: p.name)
    if not class_dirs:
        raise FileNotFoundError(f"no class subdirectories under {root}")
    if manifest.drop_last_classes:
        if manifest.drop_last_classes >= len(class_dirs):
            raise ValueError(
                f"drop_last_classes={manifest.drop_last_classes} leaves no classes "
                f"out of {len(class_dirs)}"
            )
        class_dirs = class_dirs[: len(class_dirs) - manifest.drop_last_classes]
    paths, labels = [], []
    for class_id, class_dir in enumerate(class_dirs):
        for p in images_in(class_dir):
            paths.append(p)
            labels.append(class_id)
    return paths, np.asarray(labels, dtype=np.int64), [d.name for d in class_dirs]


def load_checkpoint(manifest: ExtractionManifest) -> torch.nn.Module:
    """Build the feature extractor named by the manifest; failures are fatal."""
    torch.manual_seed(manifest.seed)
    kind, _, name = manifest.checkpoint.partition(":")
    try:
        if kind == "torchvision":
            import torchvision.models as models

            if not hasattr(models, name):
                raise ValueError(f"unknown torchvision model {name!r}")
            weights = "DEFAULT" if manifest.weights == "default" else None
            model = getattr(models, name)(weights=weights)
            if manifest.weights and manifest.weights != "default":
                state = torch.load(manifest.weights, map_location="cpu", weights_only=True)
                model.load_state_dict(state)
            # expose penultimate features
            if hasattr(model, "fc"):
                model.fc = torch.nn.Identity()
            elif hasattr(model, "classifier"):
                model.classifier = torch.nn.Identity()
            else:
                raise ValueError(f"cannot strip the classification head of {name!r}")
        elif kind == "hf-clip":
            from transformers import CLIPModel

            clip = CLIPModel.from_pretrained(name)

            class ImageTower(torch.nn.Module):
                def __init__(self, inner):
                    super().__init__()
                    self.inner = inner

                def forward(self, pixels):
                    return self.inner.get_image_features(pixel_values=pixels)

            model = ImageTower(clip)
        else:
            raise ValueError(
                f"unsupported checkpoint {manifest.checkpoint!r}; "
                "use 'torchvision:<name>' or 'hf-clip:<model-id>'"
            )
    except Exception as exc:
        raise RuntimeError(f"checkpoint load failed: {exc}") from exc
    model.eval()
    return model.to(manifest.device)


def _to_tensor(image: Image.Image) -> torch.Tensor:
    image = image.convert("RGB").resize((INPUT_SIZE, INPUT_SIZE), Image.BILINEAR)
    array = np.asarray(image, dtype=np.float32) / 255.0
    array = (array - CHANNEL_MEAN) / CHANNEL_STD
    return torch.from_numpy(array.astype(np.float32)).permute(2, 0, 1)


def extract(manifest: ExtractionManifest) -> ExtractionResult:
    """Run the checkpoint over the tree and write the CEF file."""
    paths, labels, class_names = list_images(manifest)
    model = load_checkpoint(manifest)

    tensors, kept, skipped = [], [], []
    for index, path in enumerate(paths):
        try:
            with Image.open(path) as img:
                tensors.append(_to_tensor(img))
            kept.append(index)
        except Exception as exc:
            skipped.append(str(path))
            log.warning("skipping unreadable image %d (%s): %s", index, path, exc)

    chunks = []
    with torch.no_grad():
        for start in range(0, len(tensors), manifest.batch_size):
            batch = torch.stack(tensors[start : start + manifest.batch_size])
            chunks.append(model(batch.to(manifest.device)).cpu().numpy())
    vectors = (
        np.concatenate(chunks).astype(np.float64)
        if chunks
        else np.zeros((0, 1), dtype=np.float64)
    )

    norms = np.linalg.norm(vectors, axis=1)
    good = norms > 1e-12
    for bad_row in np.flatnonzero(~good):
        skipped.append(str(paths[kept[bad_row]]))
        log.warning("skipping zero-norm embedding for image %s", paths[kept[bad_row]])
    vectors = vectors[good] / norms[good, None]

    out_labels = None
    if labels is not None:
        out_labels = labels[np.asarray(kept, dtype=np.int64)][good] if len(kept) else labels[:0]
    write_cef(manifest.output_path, vectors.astype(np.float32), out_labels)
    return ExtractionResult(int(good.sum()), skipped, class_names)
