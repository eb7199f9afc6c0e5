"""
Cross-view consensus: unmatched-set label fusion and masked BEV alignment.
"""

from .bev import (
    BevGrid,
    BevGuidance,
    GridSpec,
    VisibilityMask,
    bev_alignment_loss,
    bev_rasterize,
    build_guidance,
    ccl_guidance,
    load_grid,
    save_grid,
    visibility_mask,
)
from .consensus import consensus_labels, unmatched_valid_set

__all__ = [
    'BevGrid',
    'BevGuidance',
    'GridSpec',
    'VisibilityMask',
    'bev_alignment_loss',
    'bev_rasterize',
    'build_guidance',
    'ccl_guidance',
    'consensus_labels',
    'load_grid',
    'save_grid',
    'unmatched_valid_set',
    'visibility_mask',
]
