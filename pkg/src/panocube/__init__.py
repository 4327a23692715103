"""Cubemap panorama toolkit.

Projections between equirectangular and cubemap rasters, Poisson cross-face
blending, seam-consistency metrics, and a small frozen-backbone flow-matching
model that generates toy panoramas from text-like condition ids or a single
view.
"""

__version__ = "0.1.0"

from .geometry import (
    Cubemap,
    EdgeSpec,
    ErpImage,
    FaceId,
    Side,
    cubemap_to_erp,
    edge_table,
    erp_to_cubemap,
    extract_edge_band,
)

__all__ = [
    "__version__",
    "Cubemap",
    "EdgeSpec",
    "ErpImage",
    "FaceId",
    "Side",
    "cubemap_to_erp",
    "edge_table",
    "erp_to_cubemap",
    "extract_edge_band",
]
