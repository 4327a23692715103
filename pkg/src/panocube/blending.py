"""Cross-face Poisson blending.

Each face is re-solved as a Dirichlet problem: the interior keeps the face's
own Laplacian as guidance divergence while the one-pixel outer ring is pinned
to the pixelwise average of the face's boundary band and its neighbor's
aligned band. Faces are solved independently from the original cubemap, so
the result does not depend on face order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from .geometry import Cubemap, FaceId, Side, edge_table, extract_edge_band

__all__ = [
    "BlendConfig",
    "PoissonProblem",
    "laplacian5",
    "dirichlet_boundary",
    "gauss_seidel_solve",
    "dense_poisson_oracle",
    "cross_face_blend",
    "interior_residual",
]


@dataclass
class BlendConfig:
    iterations: int = 200
    per_channel: bool = True
    convergence_check: float | None = None  # optional max-residual early stop

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.per_channel:
            raise ValueError("only per-channel blending is supported")
        if self.convergence_check is not None and self.convergence_check <= 0:
            raise ValueError("convergence_check must be positive")


@dataclass
class PoissonProblem:
    """Single-channel Dirichlet problem on one face.

    ``boundary`` is a full (S, S) array of which only the outermost ring is
    read; ``divergence`` is read at interior pixels only.
    """

    divergence: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        self.divergence = np.asarray(self.divergence, dtype=np.float64)
        self.boundary = np.asarray(self.boundary, dtype=np.float64)
        if self.divergence.shape != self.boundary.shape:
            raise ValueError("divergence and boundary shapes differ")
        if self.divergence.ndim != 2 or min(self.divergence.shape) < 3:
            raise ValueError("problem needs a 2D face of size >= 3")


def laplacian5(face: np.ndarray) -> np.ndarray:
    """5-point Laplacian g(u+1,v)+g(u-1,v)+g(u,v+1)+g(u,v-1)-4g(u,v).

    Computed at interior pixels; the border (Dirichlet, never used) is 0.
    Accepts (S, S) or channels-last (S, S, C).
    """
    g = np.asarray(face, dtype=np.float64)
    if min(g.shape[0], g.shape[1]) < 3:
        raise ValueError("face too small for the 5-point stencil")
    out = np.zeros_like(g)
    out[1:-1, 1:-1] = (
        g[1:-1, 2:] + g[1:-1, :-2] + g[2:, 1:-1] + g[:-2, 1:-1] - 4.0 * g[1:-1, 1:-1]
    )
    return out


def _aligned_side_average(cube: Cubemap, face: FaceId, side: Side) -> np.ndarray:
    """0.5 * (own 1-px band + neighbor's aligned 1-px band), ordered along the
    face's own side parameter. Shape (S, C)."""
    for e in edge_table():
        if e.left_face == face and e.left_side == side:
            own = extract_edge_band(cube, e, 1, "left")
            nbr = extract_edge_band(cube, e, 1, "right")
            return 0.5 * (own[:, 0, :] + nbr[:, 0, :])
        if e.right_face == face and e.right_side == side:
            # Bands are returned in the edge-canonical (left-natural) order;
            # flip back to this face's natural order when the edge reverses.
            own = extract_edge_band(cube, e, 1, "right")
            nbr = extract_edge_band(cube, e, 1, "left")
            avg = 0.5 * (own[:, 0, :] + nbr[:, 0, :])
            return avg[::-1] if e.reversed else avg
    raise RuntimeError(f"({face}, {side}) missing from edge table")


def dirichlet_boundary(cube: Cubemap, face: FaceId) -> np.ndarray:
    """Dirichlet frame for one face: (S, S, C) with only the outer ring set.

    Side values average the face's own boundary pixels with the neighbor
    face's aligned boundary pixels; the four corners average the two side
    formulas that meet there.
    """
    s = cube.face_size
    frame = np.zeros_like(cube.face(face))
    north = _aligned_side_average(cube, face, Side.N)
    south = _aligned_side_average(cube, face, Side.S)
    east = _aligned_side_average(cube, face, Side.E)
    west = _aligned_side_average(cube, face, Side.W)
    frame[0, :, :] = north
    frame[s - 1, :, :] = south
    frame[:, s - 1, :] = east
    frame[:, 0, :] = west
    frame[0, 0] = 0.5 * (north[0] + west[0])
    frame[0, s - 1] = 0.5 * (north[s - 1] + east[0])
    frame[s - 1, 0] = 0.5 * (south[0] + west[s - 1])
    frame[s - 1, s - 1] = 0.5 * (south[s - 1] + east[s - 1])
    return frame


@njit(cache=True)
def _gs_sweeps(f, div, iterations):
    n, m = f.shape
    for _ in range(iterations):
        for v in range(1, n - 1):
            for u in range(1, m - 1):
                f[v, u] = 0.25 * (
                    f[v, u + 1] + f[v, u - 1] + f[v + 1, u] + f[v - 1, u] - div[v, u]
                )


@njit(cache=True)
def _gs_sweeps_until(f, div, iterations, eps):
    n, m = f.shape
    done = 0
    for _ in range(iterations):
        for v in range(1, n - 1):
            for u in range(1, m - 1):
                f[v, u] = 0.25 * (
                    f[v, u + 1] + f[v, u - 1] + f[v + 1, u] + f[v - 1, u] - div[v, u]
                )
        done += 1
        res = 0.0
        for v in range(1, n - 1):
            for u in range(1, m - 1):
                r = abs(
                    f[v, u + 1] + f[v, u - 1] + f[v + 1, u] + f[v - 1, u]
                    - 4.0 * f[v, u] - div[v, u]
                )
                if r > res:
                    res = r
        if res <= eps:
            break
    return done


def interior_residual(f: np.ndarray, divergence: np.ndarray) -> float:
    """Max-abs defect of the discretized equation over interior pixels."""
    lap = (
        f[1:-1, 2:] + f[1:-1, :-2] + f[2:, 1:-1] + f[:-2, 1:-1] - 4.0 * f[1:-1, 1:-1]
    )
    return float(np.abs(lap - divergence[1:-1, 1:-1]).max())


def gauss_seidel_solve(problem: PoissonProblem, g: np.ndarray, cfg: BlendConfig) -> np.ndarray:
    """Gauss-Seidel sweeps in raster order starting from the face itself.

    Each sweep updates interior pixels row-major, so the left and top
    neighbors are the freshly updated values and the right and bottom
    neighbors come from the previous sweep. The ring stays fixed.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != problem.divergence.shape:
        raise ValueError("initial guess shape differs from problem shape")
    f = g.copy()
    f[0, :] = problem.boundary[0, :]
    f[-1, :] = problem.boundary[-1, :]
    f[:, 0] = problem.boundary[:, 0]
    f[:, -1] = problem.boundary[:, -1]
    if cfg.convergence_check is None:
        _gs_sweeps(f, problem.divergence, cfg.iterations)
    else:
        _gs_sweeps_until(f, problem.divergence, cfg.iterations, cfg.convergence_check)
    return f


def dense_poisson_oracle(problem: PoissonProblem) -> np.ndarray:
    """Exact direct solve of the same discretized system (test oracle)."""
    n, m = problem.divergence.shape
    if max(n, m) > 32:
        raise ValueError("direct solve limited to faces of size <= 32")
    ni, mi = n - 2, m - 2
    num = ni * mi
    rows, cols, vals = [], [], []
    b = np.empty(num)

    def idx(v, u):
        return (v - 1) * mi + (u - 1)

    for v in range(1, n - 1):
        for u in range(1, m - 1):
            p = idx(v, u)
            rows.append(p)
            cols.append(p)
            vals.append(-4.0)
            rhs = problem.divergence[v, u]
            for vv, uu in ((v, u + 1), (v, u - 1), (v + 1, u), (v - 1, u)):
                if 1 <= vv <= n - 2 and 1 <= uu <= m - 2:
                    rows.append(p)
                    cols.append(idx(vv, uu))
                    vals.append(1.0)
                else:
                    rhs -= problem.boundary[vv, uu]
            b[p] = rhs

    a = csr_matrix((vals, (rows, cols)), shape=(num, num))
    sol = spsolve(a, b)
    out = problem.boundary.copy()
    out[1:-1, 1:-1] = sol.reshape(ni, mi)
    return out


def cross_face_blend(cube: Cubemap, cfg: BlendConfig | None = None) -> Cubemap:
    """Poisson-blend all six faces against their neighbors.

    Boundary frames are computed from the original cubemap, so the per-face
    solves are independent and order-free; channels are solved separately.
    """
    cfg = cfg or BlendConfig()
    frames = [dirichlet_boundary(cube, face) for face in FaceId]
    out = np.empty_like(cube.faces)
    for face in FaceId:
        g = cube.face(face)
        for c in range(cube.channels):
            problem = PoissonProblem(laplacian5(g[:, :, c]), frames[int(face)][:, :, c])
            out[int(face), :, :, c] = gauss_seidel_solve(problem, g[:, :, c], cfg)
    return Cubemap(out)
