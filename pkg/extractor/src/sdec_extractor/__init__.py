"""Input producer for the sdec toolkit: images -> embedding files + manifest."""

from .captions import Description, LlmApiClient, TemplateFallbackClient
from .config import ExtractorConfig, load_extractor_config
from .encoders import (
    EncoderLoadError,
    HashingTextEncoder,
    OfflinePatchEncoder,
    resolve_image_encoder,
    resolve_text_encoder,
)
from .extract import (
    encode_texts,
    extract_image_embeddings,
    generate_descriptions,
    run_extract,
    scan_images,
)
from .formats import write_embedding_file, write_manifest

__version__ = "0.1.0"

__all__ = [
    "Description",
    "EncoderLoadError",
    "ExtractorConfig",
    "HashingTextEncoder",
    "LlmApiClient",
    "OfflinePatchEncoder",
    "TemplateFallbackClient",
    "encode_texts",
    "extract_image_embeddings",
    "generate_descriptions",
    "load_extractor_config",
    "resolve_image_encoder",
    "resolve_text_encoder",
    "run_extract",
    "scan_images",
    "write_embedding_file",
    "write_manifest",
]
