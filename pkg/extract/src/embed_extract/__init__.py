"""Image-to-CEF embedding extraction."""

__version__ = "0.1.0"

from .extract import ExtractionManifest, ExtractionResult, extract, list_images, write_cef
