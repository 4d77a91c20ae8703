"""Fine-tuning of the combined classifier and a lightweight residual adapter.

The objective is supervised cross-entropy on labeled source batches plus a
weighted regularizer on unlabeled target batches that maximizes the entropy
of the batch-average prediction:

    L = L_sup + lambda * L_reg,   L_reg = sum_c pbar_c * ln(pbar_c)

Supervised loss restricts its softmax to the seen columns, so unseen columns
receive gradient only through the regularizer. The adapter replaces backbone
fine-tuning over precomputed embeddings: a(z) = normalize(z + A z), with A
initialized to zero so the starting model is exactly the frozen one.
All optimizer math runs in float64; plain SGD, no momentum.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import EmbeddingSet, FormatError
from .prototypes import EpochSampler, PrototypeBank, load_bank, row_softmax, save_bank

# Seed-stream tags for the two mini-batch samplers.
SOURCE_STREAM = 3
TARGET_STREAM = 4


@dataclass
class Adapter:
    """Identity ("none") or learnable linear-residual transform over embeddings."""

    kind: str
    weights: np.ndarray | None = None

    @classmethod
    def create(cls, kind: str, dim: int) -> "Adapter":
        if kind == "none":
            return cls("none", None)
        if kind == "linear-residual":
            return cls("linear-residual", np.zeros((dim, dim), dtype=np.float64))
        raise ValueError(f"unknown adapter kind {kind!r}")

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return z
        u = z + z @ self.weights.T
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        if norms.min() < 1e-12:
            raise ValueError("adapter collapsed a row to zero norm")
        return u / norms


@dataclass
class DiscoveryModel:
    """Adapter + combined classifier + the optimizer state needed to resume."""

    adapter: Adapter
    classifier: PrototypeBank
    seen_count: int
    temperature: float
    lam: float
    lr_head: float
    lr_adapter: float
    step: int = 0

    def copy(self) -> "DiscoveryModel":
        return copy.deepcopy(self)


def init_model(classifier: PrototypeBank, seen_count: int, config) -> DiscoveryModel:
    if not 1 <= seen_count <= classifier.count:
        raise ValueError(f"seen_count {seen_count} incompatible with {classifier.count} columns")
    return DiscoveryModel(
        adapter=Adapter.create(config.adapter_kind, classifier.dim),
        classifier=classifier,
        seen_count=seen_count,
        temperature=config.temperature,
        lam=config.lam,
        lr_head=config.lr_head,
        lr_adapter=config.lr_adapter,
    )


def _forward(adapter: Adapter, z: np.ndarray):
    """Adapter forward pass, returning activations plus the backprop cache."""
    if adapter.kind == "none":
        return z, None
    u = z + z @ adapter.weights.T
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    if norms.min() < 1e-12:
        raise ValueError("adapter collapsed a row to zero norm")
    a = u / norms
    return a, (a, norms)


def _adapter_grad(cache, d_act: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Backprop d(loss)/d(activations) through normalize(z + A z) to A."""
    a, norms = cache
    du = (d_act - (d_act * a).sum(axis=1, keepdims=True) * a) / norms
    return du.T @ z


def predict(model: DiscoveryModel, batch: EmbeddingSet) -> np.ndarray:
    """Softmax probabilities over the full classifier, one row per sample."""
    z = batch.vectors.astype(np.float64)
    if z.shape[1] != model.classifier.dim:
        raise ValueError(
            f"dimension mismatch: batch d={z.shape[1]}, classifier d={model.classifier.dim}"
        )
    act, _ = _forward(model.adapter, z)
    return row_softmax(act @ model.classifier.columns / model.temperature)


def _supervised_pass(model, z, labels, full_softmax=False):
    """Loss and gradients (W, adapter) of the supervised cross-entropy."""
    w = model.classifier.columns
    cols = w if full_softmax else w[:, : model.seen_count]
    act, cache = _forward(model.adapter, z)
    probs = row_softmax(act @ cols / model.temperature)
    n = len(labels)
    rows = np.arange(n)
    loss = float(-np.log(probs[rows, labels]).mean())
    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= n * model.temperature
    grad_w = np.zeros_like(w)
    if full_softmax:
        grad_w += act.T @ dlogits
    else:
        grad_w[:, : model.seen_count] = act.T @ dlogits
    grad_a = None
    if model.adapter.kind != "none":
        grad_a = _adapter_grad(cache, dlogits @ cols.T, z)
    return loss, grad_w, grad_a


def _reg_pass(model, z):
    """Loss and gradients of the negative entropy of the mean prediction."""
    w = model.classifier.columns
    act, cache = _forward(model.adapter, z)
    probs = row_softmax(act @ w / model.temperature)
    n = probs.shape[0]
    pbar = probs.mean(axis=0)
    pos = pbar > 0.0
    loss = float((pbar[pos] * np.log(pbar[pos])).sum())
    g_pbar = np.where(pos, np.log(pbar, where=pos, out=np.zeros_like(pbar)) + 1.0, 0.0)
    g_rows = g_pbar[None, :] / n
    dlogits = probs * (g_rows - (g_rows * probs).sum(axis=1, keepdims=True))
    dlogits /= model.temperature
    grad_w = act.T @ dlogits
    grad_a = None
    if model.adapter.kind != "none":
        grad_a = _adapter_grad(cache, dlogits @ w.T, z)
    return loss, grad_w, grad_a


def loss_supervised(model: DiscoveryModel, batch: EmbeddingSet, full_softmax=False) -> float:
    """Mean cross-entropy of a labeled batch (softmax over seen columns)."""
    if batch.labels is None:
        raise ValueError("supervised batch must be labeled")
    if batch.labels.size == 0:
        raise ValueError("supervised batch is empty")
    if batch.labels.max() >= model.seen_count:
        raise ValueError(
            f"label {int(batch.labels.max())} outside seen range [0, {model.seen_count})"
        )
    loss, _, _ = _supervised_pass(
        model, batch.vectors.astype(np.float64), batch.labels, full_softmax
    )
    return loss


def loss_reg(model: DiscoveryModel, batch: EmbeddingSet) -> float:
    """Negative entropy of the batch-mean prediction (0 * ln 0 == 0)."""
    if batch.count == 0:
        raise ValueError("regularizer batch is empty")
    loss, _, _ = _reg_pass(model, batch.vectors.astype(np.float64))
    return loss


def finetune(
    model: DiscoveryModel,
    source: EmbeddingSet,
    target: EmbeddingSet,
    config,
    *,
    full_batch_reg: bool = False,
    full_softmax_supervised: bool = False,
    log_fn=None,
) -> DiscoveryModel:
    """Run `config.iterations` SGD steps of the combined objective.

    Each step draws one source and one target mini-batch (seeded samplers,
    reshuffled per epoch), updates the classifier at lr_head and the adapter
    at lr_adapter, then reprojects classifier columns to unit norm.
    Deterministic for a fixed seed; iterations=0 returns an identical copy.
    """
    if source.labels is None:
        raise ValueError("source set must be labeled")
    if source.count == 0 or target.count == 0:
        raise ValueError("source and target sets must be non-empty")
    if source.labels.max() >= model.seen_count:
        raise ValueError("source labels exceed the seen-class range")

    out = model.copy()
    if config.iterations == 0:
        return out
    w = out.classifier.columns.copy()
    zs = source.vectors.astype(np.float64)
    zt = target.vectors.astype(np.float64)
    labels = source.labels
    src_sampler = EpochSampler(
        source.count, config.batch_size, np.random.default_rng([config.seed, SOURCE_STREAM])
    )
    tgt_sampler = EpochSampler(
        target.count, config.batch_size, np.random.default_rng([config.seed, TARGET_STREAM])
    )

    for _ in range(config.iterations):
        src_idx = src_sampler.next_batch()
        tgt_idx = tgt_sampler.next_batch()
        sup_loss, grad_w, grad_a = _supervised_pass(
            out, zs[src_idx], labels[src_idx], full_softmax_supervised
        )
        zt_batch = zt if full_batch_reg else zt[tgt_idx]
        reg_loss, reg_grad_w, reg_grad_a = _reg_pass(out, zt_batch)
        grad_w += config.lam * reg_grad_w
        # Columns with an exactly-zero gradient must stay bit-identical, so
        # the unit-norm projection only touches updated columns.
        touched = np.flatnonzero(np.any(grad_w != 0.0, axis=0))
        w[:, touched] -= config.lr_head * grad_w[:, touched]
        w[:, touched] /= np.linalg.norm(w[:, touched], axis=0, keepdims=True)
        out.classifier = PrototypeBank(w, kind=out.classifier.kind)
        if out.adapter.kind != "none":
            out.adapter.weights -= config.lr_adapter * (grad_a + config.lam * reg_grad_a)
        out.step += 1
        if log_fn is not None:
            log_fn(out.step, sup_loss, reg_loss, sup_loss + config.lam * reg_loss)
        w = out.classifier.columns.copy()
    return out


def gradient_check(
    model: DiscoveryModel,
    batch_s: EmbeddingSet,
    batch_t: EmbeddingSet,
    h: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs raw parameters (classifier entries and adapter entries) without
    the normalization projection, for both loss terms separately.
    """
    if batch_s.labels is None:
        raise ValueError("supervised batch must be labeled")
    zs = batch_s.vectors.astype(np.float64)
    zt = batch_t.vectors.astype(np.float64)
    labels = batch_s.labels

    def rel_err(analytic: float, numeric: float) -> float:
        denom = max(abs(analytic), abs(numeric), 1e-8)
        return abs(analytic - numeric) / denom

    def fd(loss_fn, array, index) -> float:
        orig = array[index]
        array[index] = orig + h
        hi = loss_fn()
        array[index] = orig - h
        lo = loss_fn()
        array[index] = orig
        return (hi - lo) / (2.0 * h)

    work = model.copy()
    # Rebind the classifier through a plain ndarray so in-place perturbation
    # skips the unit-norm validation of PrototypeBank.
    w = work.classifier.columns.copy()
    work.classifier = object.__new__(PrototypeBank)
    object.__setattr__(work.classifier, "columns", w)
    object.__setattr__(work.classifier, "kind", model.classifier.kind)

    sup_loss = lambda: _supervised_pass(work, zs, labels)[0]
    reg_loss = lambda: _reg_pass(work, zt)[0]
    _, sup_gw, sup_ga = _supervised_pass(work, zs, labels)
    _, reg_gw, reg_ga = _reg_pass(work, zt)

    worst = 0.0
    for idx in np.ndindex(w.shape):
        worst = max(worst, rel_err(sup_gw[idx], fd(sup_loss, w, idx)))
        worst = max(worst, rel_err(reg_gw[idx], fd(reg_loss, w, idx)))
    if work.adapter.kind != "none":
        wa = work.adapter.weights
        for idx in np.ndindex(wa.shape):
            worst = max(worst, rel_err(sup_ga[idx], fd(sup_loss, wa, idx)))
            worst = max(worst, rel_err(reg_ga[idx], fd(reg_loss, wa, idx)))
    return worst


def save_model(model: DiscoveryModel, directory) -> None:
    """Checkpoint: classifier as CEF (+kind sidecar), the rest as JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_bank(model.classifier, directory / "classifier.cef")
    meta = {
        "seen_count": model.seen_count,
        "temperature": model.temperature,
        "lambda": model.lam,
        "lr_head": model.lr_head,
        "lr_adapter": model.lr_adapter,
        "step": model.step,
        "adapter": {
            "kind": model.adapter.kind,
            "weights": None
            if model.adapter.weights is None
            else model.adapter.weights.tolist(),
        },
    }
    (directory / "model.json").write_text(json.dumps(meta) + "\n")


def load_model(directory) -> DiscoveryModel:
    directory = Path(directory)
    meta_path = directory / "model.json"
    if not meta_path.exists():
        raise FormatError(f"missing checkpoint metadata {meta_path}")
    meta = json.loads(meta_path.read_text())
    classifier = load_bank(directory / "classifier.cef")
    weights = meta["adapter"]["weights"]
    adapter = Adapter(
        meta["adapter"]["kind"],
        None if weights is None else np.asarray(weights, dtype=np.float64),
    )
    return DiscoveryModel(
        adapter=adapter,
        classifier=classifier,
        seen_count=meta["seen_count"],
        temperature=meta["temperature"],
        lam=meta["lambda"],
        lr_head=meta["lr_head"],
        lr_adapter=meta["lr_adapter"],
        step=meta["step"],
    )
