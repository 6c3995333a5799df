"""Exemplar-based image inpainting accelerated by z-curve patch indices.

The pipeline builds eight PCA-projected patch dictionaries (one per subset
layout), sorts each along the z-curve, and answers every fill step with a
k-nearest-neighbour filter followed by an exact refine in image space.
"""

from .dictionary import (
    ConfigError,
    EmptyDictionaryError,
    IndexConfig,
    PatchIndex,
    SubsetLayout,
    build_index,
    build_subset_layouts,
    collect_dictionary,
    load_indices,
    save_indices,
)
from .engine import (
    AccelerationError,
    InpaintResult,
    IterationRecord,
    MultiIndex,
    acceleration_error,
    brute_force_best,
    inpaint,
    masked_cost,
    query_best_patch,
)
from .image_core import MaskImage, PatchKey, PatchView, RasterImage, compute_fillfront, extract_patch
from .io import read_image, read_mask, text_mask, write_image, write_mask
from .zcurve import (
    HyperCube,
    KnnList,
    Norm,
    ZCurveIndex,
    find_split,
    knn_search,
    less_most_significant_bit,
    linear_knn,
    morton_less,
)

__version__ = "0.1.0"
