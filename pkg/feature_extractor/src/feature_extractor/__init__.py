"""Offline text/image feature extraction into MSEF files."""

from .extract import (
    DEFAULT_IMAGE_MODEL,
    DEFAULT_TEXT_MODEL,
    ExtractionError,
    ExtractionReport,
    collect_entity_images,
    extract_image_features,
    extract_text_features,
    read_descriptions,
    read_entities,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_IMAGE_MODEL",
    "DEFAULT_TEXT_MODEL",
    "ExtractionError",
    "ExtractionReport",
    "collect_entity_images",
    "extract_image_features",
    "extract_text_features",
    "read_descriptions",
    "read_entities",
]
