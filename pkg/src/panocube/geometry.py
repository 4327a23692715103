"""Cubemap and equirectangular geometry.

World frame: x right, y up, z forward. An equirectangular (ERP) image is a
2:1 raster over longitude lambda = atan2(x, z) in [-pi, pi) and latitude
phi = asin(y), with the +z (front) direction at image center.

Each cube face is a square raster with local axes a (rightward) and
b (downward), both in [-1, 1]. The per-face direction of a point (a, b) is

    front (a, -b,  1)    right (1, -b, -a)    back (-a, -b, -1)
    left (-1, -b,  a)    up    (a,  1,  b)    down ( a, -1, -b)

normalized to unit length. Pixel (u, v) has center a = 2(u+0.5)/S - 1,
b = 2(v+0.5)/S - 1 for face size S. The 12-entry edge table below is
validated against these formulas by the test suite rather than trusted.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FaceId",
    "Side",
    "ErpImage",
    "Cubemap",
    "EdgeSpec",
    "dir_from_face_pixel",
    "face_pixel_from_dir",
    "erp_to_cubemap",
    "cubemap_to_erp",
    "edge_table",
    "extract_edge_band",
    "edge_boundary_dirs",
    "cubemap_from_sphere_function",
]

FACE_FILE_NAMES = ("front", "right", "back", "left", "up", "down")


class FaceId(enum.IntEnum):
    FRONT = 0
    RIGHT = 1
    BACK = 2
    LEFT = 3
    UP = 4
    DOWN = 5


class Side(str, enum.Enum):
    N = "N"
    S = "S"
    E = "E"
    W = "W"


@dataclass
class ErpImage:
    """Equirectangular raster, channels-last floats, width = 2 * height."""

    data: np.ndarray  # (H, W, C)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"ERP data must be (H, W, C), got shape {self.data.shape}")
        h, w, c = self.data.shape
        if w != 2 * h:
            raise ValueError(f"ERP width must be 2 * height, got {w}x{h}")
        if c not in (1, 3):
            raise ValueError(f"ERP channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ERP intensities must be finite")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class Cubemap:
    """Six square faces indexed by FaceId, channels-last floats."""

    faces: np.ndarray  # (6, S, S, C)

    def __post_init__(self):
        self.faces = np.asarray(self.faces, dtype=np.float64)
        if self.faces.ndim != 4 or self.faces.shape[0] != 6:
            raise ValueError(f"cubemap faces must be (6, S, S, C), got {self.faces.shape}")
        if self.faces.shape[1] != self.faces.shape[2]:
            raise ValueError("cubemap faces must be square")
        if self.faces.shape[3] not in (1, 3):
            raise ValueError(f"cubemap channels must be 1 or 3, got {self.faces.shape[3]}")
        if not np.all(np.isfinite(self.faces)):
            raise ValueError("cubemap intensities must be finite")

    @property
    def face_size(self) -> int:
        return self.faces.shape[1]

    @property
    def channels(self) -> int:
        return self.faces.shape[3]

    def face(self, face: FaceId) -> np.ndarray:
        return self.faces[int(face)]

    def copy(self) -> "Cubemap":
        return Cubemap(self.faces.copy())


@dataclass(frozen=True)
class EdgeSpec:
    """One shared cube edge between two (face, side) pairs.

    ``reversed`` means the right band must be index-reversed along the edge
    to align pixelwise with the left band.
    """

    edge_index: int
    left_face: FaceId
    left_side: Side
    right_face: FaceId
    right_side: Side
    reversed: bool


def _face_dirs(face: FaceId, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Unnormalized direction(s) for face-local coordinates, stacked last."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    one = np.ones(np.broadcast_shapes(a.shape, b.shape))
    a, b = np.broadcast_to(a, one.shape), np.broadcast_to(b, one.shape)
    if face == FaceId.FRONT:
        xyz = (a, -b, one)
    elif face == FaceId.RIGHT:
        xyz = (one, -b, -a)
    elif face == FaceId.BACK:
        xyz = (-a, -b, -one)
    elif face == FaceId.LEFT:
        xyz = (-one, -b, a)
    elif face == FaceId.UP:
        xyz = (a, one, b)
    elif face == FaceId.DOWN:
        xyz = (a, -one, -b)
    else:
        raise ValueError(f"unknown face {face!r}")
    return np.stack(xyz, axis=-1)


def dir_from_face_pixel(face: FaceId, u: float, v: float, face_size: int) -> np.ndarray:
    """Unit direction through the center of pixel (u, v) on a face.

    Fractional u, v address sub-pixel positions (e.g. patch centers); the
    pixel-center offset of +0.5 is applied either way.
    """
    if not (0 <= u < face_size and 0 <= v < face_size):
        raise ValueError(f"pixel ({u}, {v}) out of range for face size {face_size}")
    a = 2.0 * (u + 0.5) / face_size - 1.0
    b = 2.0 * (v + 0.5) / face_size - 1.0
    d = _face_dirs(FaceId(face), a, b)
    return d / np.linalg.norm(d)


def _faces_uv_from_dirs(dirs: np.ndarray, face_size: int):
    """Vectorized face selection + continuous pixel coords for directions.

    Returns (face_ids, u, v) with u, v in continuous pixel units (pixel i
    spans [i, i+1), center at i + 0.5). Face ties are broken by the fixed
    priority front > right > back > left > up > down.
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    # Signed outwardness per face in priority order; argmax takes the first max.
    scores = np.stack([z, x, -z, -x, y, -y], axis=-1)
    face_ids = np.argmax(scores, axis=-1)
    t = np.take_along_axis(scores, face_ids[..., None], axis=-1)[..., 0]

    # Inverses of the per-face direction formulas, with t = |dominant component|.
    a = np.empty_like(t)
    b = np.empty_like(t)
    inverse = {
        FaceId.FRONT: (x, 1.0, y, -1.0),
        FaceId.RIGHT: (z, -1.0, y, -1.0),
        FaceId.BACK: (x, -1.0, y, -1.0),
        FaceId.LEFT: (z, 1.0, y, -1.0),
        FaceId.UP: (x, 1.0, z, 1.0),
        FaceId.DOWN: (x, 1.0, z, -1.0),
    }
    for fid, (anum, asign, bnum, bsign) in inverse.items():
        m = face_ids == int(fid)
        if not np.any(m):
            continue
        tm = t[m]
        a[m] = asign * anum[m] / tm
        b[m] = bsign * bnum[m] / tm
    u = (a + 1.0) * 0.5 * face_size
    v = (b + 1.0) * 0.5 * face_size
    return face_ids, u, v


def face_pixel_from_dir(d: np.ndarray, face_size: int) -> tuple[FaceId, float, float]:
    """Face and continuous pixel coordinates hit by a direction.

    Inverse of :func:`dir_from_face_pixel` at pixel centers: the center of
    pixel (u, v) maps back to coordinates (u + 0.5, v + 0.5).
    """
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (3,):
        raise ValueError(f"direction must have shape (3,), got {d.shape}")
    if not np.any(d != 0.0):
        raise ValueError("zero vector has no face")
    face_ids, u, v = _faces_uv_from_dirs(d[None, :], face_size)
    return FaceId(int(face_ids[0])), float(u[0]), float(v[0])


def _lerp(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> np.ndarray:
    # a + w*(b-a) is exact when a == b, keeping constants constant.
    return a + w * (b - a)


def _bilinear(img: np.ndarray, y: np.ndarray, x: np.ndarray, wrap_x: bool) -> np.ndarray:
    """Bilinear sample at continuous pixel coords (pixel i center = i + 0.5).

    Rows are clamped; columns wrap when ``wrap_x`` (longitude), else clamp.
    """
    h, w = img.shape[:2]
    yy = np.clip(y, 0.5, h - 0.5) - 0.5
    y0 = np.clip(np.floor(yy).astype(np.int64), 0, max(h - 2, 0))
    fy = yy - y0
    y1 = np.minimum(y0 + 1, h - 1)

    xx = x - 0.5
    if wrap_x:
        x0f = np.floor(xx)
        fx = xx - x0f
        x0 = np.mod(x0f.astype(np.int64), w)
        x1 = np.mod(x0 + 1, w)
    else:
        xx = np.clip(xx, 0.0, w - 1.0)
        x0 = np.clip(np.floor(xx).astype(np.int64), 0, max(w - 2, 0))
        fx = xx - x0
        x1 = np.minimum(x0 + 1, w - 1)

    fy = fy[..., None]
    fx = fx[..., None]
    top = _lerp(img[y0, x0], img[y0, x1], fx)
    bot = _lerp(img[y1, x0], img[y1, x1], fx)
    return _lerp(top, bot, fy)


def _pixel_centers(n: int) -> np.ndarray:
    return 2.0 * (np.arange(n, dtype=np.float64) + 0.5) / n - 1.0


def erp_to_cubemap(erp: ErpImage, face_size: int) -> Cubemap:
    """Resample an ERP image onto six cube faces (bilinear, wrap-aware)."""
    if face_size < 1:
        raise ValueError("face_size must be >= 1")
    h, w = erp.height, erp.width
    coords = _pixel_centers(face_size)
    aa, bb = np.meshgrid(coords, coords, indexing="xy")  # aa: columns, bb: rows
    faces = np.empty((6, face_size, face_size, erp.channels), dtype=np.float64)
    for face in FaceId:
        d = _face_dirs(face, aa, bb)
        norm = np.linalg.norm(d, axis=-1)
        lam = np.arctan2(d[..., 0], d[..., 2])
        phi = np.arcsin(np.clip(d[..., 1] / norm, -1.0, 1.0))
        x = (lam / (2.0 * math.pi) + 0.5) * w
        y = (0.5 - phi / math.pi) * h
        faces[int(face)] = _bilinear(erp.data, y, x, wrap_x=True)
    return Cubemap(faces)


def cubemap_to_erp(cube: Cubemap, width: int, height: int) -> ErpImage:
    """Resample a cubemap into a 2:1 ERP raster.

    Sampling clamps to the chosen face near its borders; seams are handled
    by the blending module, not by cross-face interpolation here.
    """
    if width != 2 * height:
        raise ValueError(f"ERP width must be 2 * height, got {width}x{height}")
    s = cube.face_size
    uu = np.arange(width, dtype=np.float64) + 0.5
    vv = np.arange(height, dtype=np.float64) + 0.5
    lam = (uu / width) * 2.0 * math.pi - math.pi
    phi = (0.5 - vv / height) * math.pi
    lam, phi = np.meshgrid(lam, phi, indexing="xy")
    cphi = np.cos(phi)
    dirs = np.stack([cphi * np.sin(lam), np.sin(phi), cphi * np.cos(lam)], axis=-1)
    face_ids, u, v = _faces_uv_from_dirs(dirs, s)

    out = np.empty((height, width, cube.channels), dtype=np.float64)
    for face in FaceId:
        m = face_ids == int(face)
        if not np.any(m):
            continue
        out[m] = _bilinear(cube.faces[int(face)], v[m], u[m], wrap_x=False)
    return ErpImage(out)


# Derived from the per-face direction formulas: the two (face, side) pairs of
# each 3D cube edge, with reversed set when their along-edge parameters run in
# opposite directions. Validated by the edge-alignment invariant test.
_EDGE_TABLE: tuple[EdgeSpec, ...] = (
    EdgeSpec(0, FaceId.FRONT, Side.N, FaceId.UP, Side.S, False),
    EdgeSpec(1, FaceId.FRONT, Side.S, FaceId.DOWN, Side.N, False),
    EdgeSpec(2, FaceId.FRONT, Side.E, FaceId.RIGHT, Side.W, False),
    EdgeSpec(3, FaceId.FRONT, Side.W, FaceId.LEFT, Side.E, False),
    EdgeSpec(4, FaceId.RIGHT, Side.N, FaceId.UP, Side.E, True),
    EdgeSpec(5, FaceId.RIGHT, Side.S, FaceId.DOWN, Side.E, False),
    EdgeSpec(6, FaceId.RIGHT, Side.E, FaceId.BACK, Side.W, False),
    EdgeSpec(7, FaceId.BACK, Side.N, FaceId.UP, Side.N, True),
    EdgeSpec(8, FaceId.BACK, Side.S, FaceId.DOWN, Side.S, True),
    EdgeSpec(9, FaceId.BACK, Side.E, FaceId.LEFT, Side.W, False),
    EdgeSpec(10, FaceId.LEFT, Side.N, FaceId.UP, Side.W, False),
    EdgeSpec(11, FaceId.LEFT, Side.S, FaceId.DOWN, Side.W, True),
)


def edge_table() -> list[EdgeSpec]:
    """The 12 cube edges as validated (face, side) pairings."""
    return list(_EDGE_TABLE)


def _natural_band(face_raster: np.ndarray, side: Side, width_px: int) -> np.ndarray:
    """Band in the side's natural order: rows follow the face-local along-edge
    parameter (a for N/S, b for E/W) increasing; column 0 touches the edge."""
    f = face_raster
    if side == Side.N:
        return np.ascontiguousarray(np.transpose(f[:width_px, :, :], (1, 0, 2)))
    if side == Side.S:
        return np.ascontiguousarray(np.transpose(f[: -width_px - 1 : -1, :, :], (1, 0, 2)))
    if side == Side.E:
        return np.ascontiguousarray(f[:, : -width_px - 1 : -1, :])
    if side == Side.W:
        return np.ascontiguousarray(f[:, :width_px, :])
    raise ValueError(f"unknown side {side!r}")


def extract_edge_band(cube: Cubemap, edge: EdgeSpec, width_px: int, side: str) -> np.ndarray:
    """Boundary band (face_size, width_px, C) for one side of an edge.

    Column 0 is adjacent to the edge; rows of the left and right bands align
    pixelwise (the right band is row-flipped when the edge is reversed).
    """
    s = cube.face_size
    if not (1 <= width_px <= s // 2):
        raise ValueError(f"band width {width_px} out of range for face size {s}")
    if side == "left":
        band = _natural_band(cube.face(edge.left_face), edge.left_side, width_px)
    elif side == "right":
        band = _natural_band(cube.face(edge.right_face), edge.right_side, width_px)
        if edge.reversed:
            band = band[::-1, :, :].copy()
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return band


def edge_boundary_dirs(face: FaceId, side: Side, k: int) -> np.ndarray:
    """K unit directions equally spaced along the outer boundary of a side,
    in the side's natural along-edge order. Used to validate the edge table."""
    s = -1.0 + 2.0 * (np.arange(k, dtype=np.float64) + 0.5) / k
    if side == Side.N:
        a, b = s, np.full(k, -1.0)
    elif side == Side.S:
        a, b = s, np.full(k, 1.0)
    elif side == Side.E:
        a, b = np.full(k, 1.0), s
    elif side == Side.W:
        a, b = np.full(k, -1.0), s
    else:
        raise ValueError(f"unknown side {side!r}")
    d = _face_dirs(face, a, b)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def cubemap_from_sphere_function(fn, face_size: int, channels: int = 1) -> Cubemap:
    """Cubemap whose pixel (u, v) holds fn(direction) at the pixel center.

    ``fn`` maps an (..., 3) array of unit directions to (...,) or
    (..., channels) values.
    """
    coords = _pixel_centers(face_size)
    aa, bb = np.meshgrid(coords, coords, indexing="xy")
    faces = np.empty((6, face_size, face_size, channels), dtype=np.float64)
    for face in FaceId:
        d = _face_dirs(face, aa, bb)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        vals = np.asarray(fn(d), dtype=np.float64)
        if vals.ndim == 2:
            vals = vals[:, :, None]
        if vals.shape[-1] == 1 and channels > 1:
            vals = np.repeat(vals, channels, axis=-1)
        faces[int(face)] = vals
    return Cubemap(faces)
