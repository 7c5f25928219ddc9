"""patchforge: magnification-normalized patch datasets from whole-slide images."""

__version__ = "0.1.0"

from .augment import AugRng, AugmentConfig, apply_eval, apply_train
from .raster import Raster
from .sampler import PatchRecord, SampleSpec
from .slide import (
    MppSpec,
    PyramidLevel,
    Slide,
    level_for_mpp,
    open_slide,
    physical_extent_px,
    read_region,
    write_slide,
)
from .splits import SplitPlan
from .tissue import TissueMask, otsu_threshold, tissue_fraction, tissue_mask
from .vitgeom import (
    PosEmbed,
    TokenGrid,
    feature_map_size,
    flatten_map,
    lr_at,
    resize_pos_embed,
    retile,
    validate_layer_tap,
    zero_pos_embed,
)

__all__ = [
    "AugRng",
    "AugmentConfig",
    "MppSpec",
    "PatchRecord",
    "PosEmbed",
    "PyramidLevel",
    "Raster",
    "SampleSpec",
    "Slide",
    "SplitPlan",
    "TissueMask",
    "TokenGrid",
    "apply_eval",
    "apply_train",
    "feature_map_size",
    "flatten_map",
    "level_for_mpp",
    "lr_at",
    "open_slide",
    "otsu_threshold",
    "physical_extent_px",
    "read_region",
    "resize_pos_embed",
    "retile",
    "tissue_fraction",
    "tissue_mask",
    "validate_layer_tap",
    "write_slide",
    "zero_pos_embed",
]
