"""Seam-consistency metrics over the 12 cube edges.

Two complementary scores: band SSIM (higher = more consistent) and near-edge
x-Sobel magnitude (lower = more consistent). For the Sobel score each face is
oriented so the shared edge is vertical on its east side and the gradient
column adjacent to the edge is evaluated on the two-face composite, so a
brightness jump across the seam registers even when both faces are smooth
inside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate, uniform_filter

from .geometry import Cubemap, edge_table, extract_edge_band

__all__ = [
    "SeamParams",
    "SeamReport",
    "ssim_band",
    "sobel_x",
    "seam_ssim",
    "seam_sobel",
    "evaluate_seams",
]

SOBEL_X_KERNEL = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])

_VALUE_SCALES = {"unit": 1.0, "byte": 255.0}


@dataclass
class SeamParams:
    band_frac: float = 0.01
    value_scale: str = "byte"
    # SSIM stabilizers (0.01*L)^2 and (0.03*L)^2 for value range L = 1.
    ssim_c1: float = 1e-4
    ssim_c2: float = 9e-4

    def __post_init__(self):
        if not 0.0 < self.band_frac <= 0.5:
            raise ValueError("band_frac must be in (0, 0.5]")
        if self.value_scale not in _VALUE_SCALES:
            raise ValueError(f"value_scale must be one of {sorted(_VALUE_SCALES)}")
        if self.ssim_c1 <= 0 or self.ssim_c2 <= 0:
            raise ValueError("SSIM stabilizers must be positive")

    @property
    def scale_factor(self) -> float:
        return _VALUE_SCALES[self.value_scale]

    def band_width(self, face_size: int) -> int:
        return max(1, round(self.band_frac * face_size))

    def to_dict(self) -> dict:
        return {
            "band_frac": self.band_frac,
            "value_scale": self.value_scale,
            "ssim_c1": self.ssim_c1,
            "ssim_c2": self.ssim_c2,
        }


@dataclass
class SeamReport:
    params: SeamParams
    per_edge_ssim: np.ndarray | None = None
    per_edge_sobel: np.ndarray | None = None

    def __post_init__(self):
        for arr, lo in ((self.per_edge_ssim, -1.0 - 1e-9), (self.per_edge_sobel, 0.0)):
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != (12,):
                raise ValueError("per-edge values must cover the 12 edges")
            if arr.min() < lo:
                raise ValueError("per-edge value out of range")
        if self.per_edge_ssim is not None and np.asarray(self.per_edge_ssim).max() > 1.0 + 1e-9:
            raise ValueError("per-edge SSIM above 1")

    @property
    def seam_ssim(self) -> float:
        return float(np.mean(self.per_edge_ssim))

    @property
    def seam_sobel(self) -> float:
        return float(np.mean(self.per_edge_sobel))

    def merged_with(self, other: "SeamReport") -> "SeamReport":
        return SeamReport(
            params=self.params,
            per_edge_ssim=self.per_edge_ssim if self.per_edge_ssim is not None else other.per_edge_ssim,
            per_edge_sobel=self.per_edge_sobel if self.per_edge_sobel is not None else other.per_edge_sobel,
        )

    def to_dict(self) -> dict:
        out = {"params": self.params.to_dict(), "edges": []}
        if self.per_edge_ssim is not None:
            out["seam_ssim"] = self.seam_ssim
        if self.per_edge_sobel is not None:
            out["seam_sobel"] = self.seam_sobel
        for i in range(12):
            entry = {"index": i}
            if self.per_edge_ssim is not None:
                entry["ssim"] = float(self.per_edge_ssim[i])
            if self.per_edge_sobel is not None:
                entry["sobel"] = float(self.per_edge_sobel[i])
            out["edges"].append(entry)
        return out


def ssim_band(a: np.ndarray, b: np.ndarray, params: SeamParams | None = None) -> float:
    """Mean local SSIM between two aligned bands.

    Uses a uniform square window of side min(band_width, 7) clamped to an odd
    size >= 1, computed per channel and averaged.
    """
    params = params or SeamParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"band shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    win = min(a.shape[1], 7)
    if win % 2 == 0:
        win -= 1
    win = max(win, 1)
    c1, c2 = params.ssim_c1, params.ssim_c2

    vals = []
    for c in range(a.shape[2]):
        ac, bc = a[:, :, c], b[:, :, c]
        mu_a = uniform_filter(ac, size=win, mode="reflect")
        mu_b = uniform_filter(bc, size=win, mode="reflect")
        var_a = uniform_filter(ac * ac, size=win, mode="reflect") - mu_a * mu_a
        var_b = uniform_filter(bc * bc, size=win, mode="reflect") - mu_b * mu_b
        cov = uniform_filter(ac * bc, size=win, mode="reflect") - mu_a * mu_b
        ssim_map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
            (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        )
        vals.append(np.mean(ssim_map))
    return float(np.mean(vals))


def sobel_x(face: np.ndarray) -> np.ndarray:
    """x-direction Sobel response with replicate-padded borders, per channel."""
    f = np.asarray(face, dtype=np.float64)
    if min(f.shape[0], f.shape[1]) < 3:
        raise ValueError("face too small for the Sobel stencil")
    squeeze = f.ndim == 2
    if squeeze:
        f = f[:, :, None]
    out = np.empty_like(f)
    for c in range(f.shape[2]):
        out[:, :, c] = correlate(f[:, :, c], SOBEL_X_KERNEL, mode="nearest")
    return out[:, :, 0] if squeeze else out


def _edge_sobel_score(cube: Cubemap, edge, factor: float) -> float:
    # Composite [L1 L0 | R0 R1] joins the faces at the (vertical) edge; the
    # gradient columns adjacent to the seam then see the actual neighbor
    # pixels instead of replicate padding.
    left = extract_edge_band(cube, edge, 2, "left")
    right = extract_edge_band(cube, edge, 2, "right")
    composite = np.concatenate([left[:, ::-1, :], right], axis=1)
    grad = sobel_x(composite)
    c_left = grad[:, 1, :]
    c_right = grad[:, 2, :]
    return 0.5 * (np.abs(c_left).mean() + np.abs(c_right).mean()) * factor


def seam_ssim(cube: Cubemap, params: SeamParams | None = None) -> SeamReport:
    """Band-SSIM seam report: mean SSIM of aligned boundary bands per edge."""
    params = params or SeamParams()
    width = params.band_width(cube.face_size)
    if width > cube.face_size // 2:
        raise ValueError("band width exceeds half the face size")
    vals = np.empty(12)
    for e in edge_table():
        left = extract_edge_band(cube, e, width, "left")
        right = extract_edge_band(cube, e, width, "right")
        vals[e.edge_index] = ssim_band(left, right, params)
    return SeamReport(params=params, per_edge_ssim=vals)


def seam_sobel(cube: Cubemap, params: SeamParams | None = None) -> SeamReport:
    """Near-edge Sobel seam report on the configured value scale."""
    params = params or SeamParams()
    if cube.face_size < 4:
        raise ValueError("seam Sobel needs a face size of at least 4")
    factor = params.scale_factor
    vals = np.empty(12)
    for e in edge_table():
        vals[e.edge_index] = _edge_sobel_score(cube, e, factor)
    return SeamReport(params=params, per_edge_sobel=vals)


def evaluate_seams(cube: Cubemap, params: SeamParams | None = None) -> SeamReport:
    """Both seam metrics in one report."""
    params = params or SeamParams()
    return seam_ssim(cube, params).merged_with(seam_sobel(cube, params))
