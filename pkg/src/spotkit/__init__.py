"""Region-referring instruction toolkit.

Encodes image regions into instruction text, builds unified
instruction-following corpora from detection/OCR/VQA annotations, evaluates
chat-model backends on region-level tasks, and serves interactive click/box
chat sessions.
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: E402
    ImageDims,
    Region,
    RegionKind,
    SizeBucket,
    box_area_px,
    denormalize_region,
    enclosing_box,
    iou,
    normalize_region,
    perturb_box,
    size_bucket,
)
from .instructgen import (  # noqa: E402
    Role,
    Style,
    Task,
    Template,
    TemplateRegistry,
    Turn,
    parse_region_tokens,
    render,
    render_conversation,
    serialize_region,
)

__all__ = [
    "__version__",
    "ImageDims",
    "Region",
    "RegionKind",
    "SizeBucket",
    "box_area_px",
    "denormalize_region",
    "enclosing_box",
    "iou",
    "normalize_region",
    "perturb_box",
    "size_bucket",
    "Role",
    "Style",
    "Task",
    "Template",
    "TemplateRegistry",
    "Turn",
    "parse_region_tokens",
    "render",
    "render_conversation",
    "serialize_region",
]
