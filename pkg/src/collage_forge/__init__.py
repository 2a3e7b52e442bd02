"""Context-matched collage synthesis and detection metrics."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    BoxLabel,
    CabofLabel,
    CollagePlan,
    Detection,
    FrameRef,
    Placement,
    Rect,
    SubstrateCombo,
    Timestamp,
    canonical_combo,
)
