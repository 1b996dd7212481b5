"""Crystal geometry kernel: lattices, periodic wrapping, minimum-image
distances, Niggli reduction, and periodic neighbor graphs.

Conventions
-----------
- The lattice matrix ``L`` is 3x3 with ROWS as lattice vectors, so row
  vectors of fractional coordinates map to Cartesian as ``r_c = r_f @ L``.
- Lattices constructed from parameters are right-handed (``det L > 0``)
  and canonically oriented: ``a`` along x, ``b`` in the xy-plane.
- Angles are degrees: alpha = angle(b, c), beta = angle(a, c),
  gamma = angle(a, b).
- Fractional coordinates of a structure live in [0, 1).
- ``min_image_distance`` searches translations in [-1, 1]^3, which is
  sufficient for Niggli-reduced cells only; reduce first for skewed cells.

Everything here is immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateStructureError, GeometryError, ReductionError

# Angles closer than this (degrees) to 0 or 180 make L effectively singular.
DEGENERATE_ANGLE_TOL = 1e-6

# Dimensionless tolerance of the Krivy-Gruber parameter comparisons,
# applied to the squared-length scale V^(2/3).
NIGGLI_TOL = 1e-5
NIGGLI_MAX_ITER = 100

__all__ = [
    "Lattice",
    "CrystalStructure",
    "PeriodicGraph",
    "wrap_pi",
    "lattice_from_params",
    "params_from_matrix",
    "min_image_distance",
    "min_image_vector",
    "min_image_distance_matrix",
    "niggli_reduce",
    "niggli_reduce_with_transform",
    "build_periodic_graph",
]


def wrap_pi(r: np.ndarray) -> np.ndarray:
    """Wrap coordinates into [0, 1) componentwise: ``r - floor(r)``.

    Idempotent; raises ``ValueError`` on non-finite input.  The raw
    ``r - floor(r)`` can round to exactly 1.0 for tiny negative inputs,
    so such components are folded back to 0.0 to keep the [0, 1) contract.
    """
    r = np.asarray(r, dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise ValueError("wrap_pi: input must be finite")
    out = r - np.floor(r)
    return np.where(out >= 1.0, out - 1.0, out)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Lattice:
    """A 3D periodic cell: lengths (Angstrom), angles (degrees), and the
    row-vector matrix realizing them."""

    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float
    matrix: np.ndarray = field(repr=False)

    @classmethod
    def from_parameters(cls, a, b, c, alpha, beta, gamma) -> "Lattice":
        matrix = _matrix_from_params(a, b, c, alpha, beta, gamma)
        return cls(float(a), float(b), float(c), float(alpha), float(beta),
                   float(gamma), _readonly(matrix))

    @classmethod
    def from_matrix(cls, matrix) -> "Lattice":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise GeometryError("lattice matrix must be 3x3")
        if not np.all(np.isfinite(matrix)):
            raise GeometryError("lattice matrix must be finite")
        a, b, c, alpha, beta, gamma = params_from_matrix(matrix)
        det = float(np.linalg.det(matrix))
        if det <= 0:
            raise GeometryError(
                f"lattice matrix must be right-handed (det > 0), got det={det:g}")
        return cls(a, b, c, alpha, beta, gamma, _readonly(matrix))

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    @property
    def angles(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    @property
    def parameters(self) -> tuple[float, float, float, float, float, float]:
        return (self.a, self.b, self.c, self.alpha, self.beta, self.gamma)

    @property
    def volume(self) -> float:
        """Cell volume det L (positive by construction), in Angstrom^3."""
        return float(np.linalg.det(self.matrix))

    @property
    def inv_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.matrix)

    def frac_to_cart(self, frac: np.ndarray) -> np.ndarray:
        return np.asarray(frac, dtype=np.float64) @ self.matrix

    def cart_to_frac(self, cart: np.ndarray) -> np.ndarray:
        return np.asarray(cart, dtype=np.float64) @ self.inv_matrix

    def plane_heights(self) -> np.ndarray:
        """Perpendicular distances between the three lattice-plane families.

        ``heights[i]`` is the cell extent normal to the plane spanned by
        the other two lattice vectors; it bounds how many periodic images
        along axis i can fall within a given Cartesian radius.
        """
        rows = self.matrix
        vol = self.volume
        cross = np.stack([
            np.cross(rows[1], rows[2]),
            np.cross(rows[2], rows[0]),
            np.cross(rows[0], rows[1]),
        ])
        return vol / np.linalg.norm(cross, axis=1)


def _matrix_from_params(a, b, c, alpha, beta, gamma) -> np.ndarray:
    a, b, c = float(a), float(b), float(c)
    alpha, beta, gamma = float(alpha), float(beta), float(gamma)
    for name, val in (("a", a), ("b", b), ("c", c)):
        if not math.isfinite(val) or val <= 0:
            raise GeometryError(f"lattice length {name} must be positive, got {val!r}")
    for name, val in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
        if not math.isfinite(val):
            raise GeometryError(f"lattice angle {name} must be finite")
        if not (DEGENERATE_ANGLE_TOL < val < 180.0 - DEGENERATE_ANGLE_TOL):
            raise GeometryError(
                f"lattice angle {name}={val!r} deg is outside (0, 180) or "
                "degenerately close to the boundary")

    al, be, ga = np.deg2rad([alpha, beta, gamma])
    cos_a, cos_b, cos_g = np.cos([al, be, ga])
    sin_g = np.sin(ga)

    cx = c * cos_b
    cy = c * (cos_a - cos_b * cos_g) / sin_g
    cz_sq = c * c - cx * cx - cy * cy
    if cz_sq <= (1e-6 * c) ** 2:
        raise GeometryError(
            f"angle triple ({alpha}, {beta}, {gamma}) deg is not geometrically "
            "realizable (degenerate or imaginary cell height)")
    matrix = np.array([
        [a, 0.0, 0.0],
        [b * cos_g, b * sin_g, 0.0],
        [cx, cy, math.sqrt(cz_sq)],
    ])
    return matrix


def lattice_from_params(a, b, c, alpha, beta, gamma) -> Lattice:
    """Build a canonically oriented right-handed lattice from cell parameters."""
    return Lattice.from_parameters(a, b, c, alpha, beta, gamma)


def params_from_matrix(matrix) -> tuple[float, float, float, float, float, float]:
    """Recover (a, b, c, alpha, beta, gamma) from a row-vector lattice matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (3, 3):
        raise GeometryError("lattice matrix must be 3x3")
    lengths = np.linalg.norm(matrix, axis=1)
    if np.any(lengths <= 0) or abs(np.linalg.det(matrix)) < 1e-12 * np.prod(lengths):
        raise GeometryError("lattice matrix is singular or has a zero-length row")
    a_v, b_v, c_v = matrix
    alpha = math.degrees(math.acos(np.clip(b_v @ c_v / (lengths[1] * lengths[2]), -1, 1)))
    beta = math.degrees(math.acos(np.clip(a_v @ c_v / (lengths[0] * lengths[2]), -1, 1)))
    gamma = math.degrees(math.acos(np.clip(a_v @ b_v / (lengths[0] * lengths[1]), -1, 1)))
    return (float(lengths[0]), float(lengths[1]), float(lengths[2]),
            alpha, beta, gamma)


@dataclass(frozen=True)
class CrystalStructure:
    """A periodic crystal: lattice, fractional coordinates in [0, 1), and
    atomic numbers."""

    lattice: Lattice
    frac_coords: np.ndarray = field(repr=False)
    atomic_numbers: np.ndarray = field(repr=False)

    def __post_init__(self):
        frac = np.ascontiguousarray(self.frac_coords, dtype=np.float64)
        numbers = np.ascontiguousarray(self.atomic_numbers, dtype=np.int64)
        if frac.ndim != 2 or frac.shape[1] != 3:
            raise ValueError(f"frac_coords must be (N, 3), got {frac.shape}")
        if frac.shape[0] < 1:
            raise ValueError("a structure needs at least one atom")
        if not np.all(np.isfinite(frac)):
            raise ValueError("frac_coords must be finite")
        if np.any(frac < 0.0) or np.any(frac >= 1.0):
            raise ValueError("frac_coords must lie in [0, 1); wrap first")
        if numbers.ndim != 1 or numbers.shape[0] != frac.shape[0]:
            raise ValueError("atomic_numbers length must match frac_coords rows")
        if np.any(numbers < 1) or np.any(numbers > 118):
            raise ValueError("atomic numbers must be in [1, 118]")
        frac.setflags(write=False)
        numbers.setflags(write=False)
        object.__setattr__(self, "frac_coords", frac)
        object.__setattr__(self, "atomic_numbers", numbers)

    @classmethod
    def with_wrapped_coords(cls, lattice, coords, atomic_numbers) -> "CrystalStructure":
        return cls(lattice, wrap_pi(coords), atomic_numbers)

    @property
    def n_atoms(self) -> int:
        return self.frac_coords.shape[0]

    def cart_coords(self) -> np.ndarray:
        return self.lattice.frac_to_cart(self.frac_coords)


@dataclass(frozen=True)
class PeriodicGraph:
    """Directed periodic neighbor list.

    Edge ``k`` connects receiver ``edge_src[k]`` to neighbor
    ``edge_dst[k]`` in the image shifted by integer translation
    ``edge_shift[k]``; its Cartesian displacement is
    ``(frac[src] - frac[dst] + shift) @ L`` with length ``edge_len[k]``.
    The edge set is closed under reversal ``(m, n, T) <-> (n, m, -T)``.
    ``node_features`` is model-side payload and may be None.
    """

    n_nodes: int
    edge_src: np.ndarray = field(repr=False)
    edge_dst: np.ndarray = field(repr=False)
    edge_shift: np.ndarray = field(repr=False)
    edge_vec: np.ndarray = field(repr=False)
    edge_len: np.ndarray = field(repr=False)
    node_features: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_edges(self) -> int:
        return self.edge_src.shape[0]


_UNIT_SHIFTS = np.array(list(itertools.product((-1, 0, 1), repeat=3)), dtype=np.float64)


def _min_image(lattice: Lattice, dfrac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-image resolution of fractional displacement(s).

    Returns ``(dist, vec)`` where ``vec`` is the winning fractional
    displacement ``dfrac + T`` with T searched over [-1, 1]^3 (valid for
    reduced cells).  Ties resolve to the lexicographically smallest T.
    """
    dfrac = np.asarray(dfrac, dtype=np.float64)
    cand = dfrac[..., None, :] + _UNIT_SHIFTS
    cart = cand @ lattice.matrix
    norms = np.linalg.norm(cart, axis=-1)
    best = np.argmin(norms, axis=-1)
    dist = np.take_along_axis(norms, best[..., None], axis=-1)[..., 0]
    vec = np.take_along_axis(cand, best[..., None, None], axis=-2)[..., 0, :]
    return dist, vec


def min_image_distance(lattice: Lattice, frac_a, frac_b) -> float | np.ndarray:
    """Shortest Cartesian distance between two fractional positions over
    periodic images, searching translations in [-1, 1]^3.

    Correct for Niggli-reduced cells; callers holding skewed cells must
    reduce first.  Inputs are wrapped internally, so the result is
    invariant under wrapping of either argument.
    """
    fa = wrap_pi(np.asarray(frac_a, dtype=np.float64))
    fb = wrap_pi(np.asarray(frac_b, dtype=np.float64))
    dist, _ = _min_image(lattice, fa - fb)
    return float(dist) if np.ndim(dist) == 0 else dist


def min_image_vector(lattice: Lattice, frac_a, frac_b) -> tuple[float, np.ndarray]:
    """Like :func:`min_image_distance` but also returns the fractional
    displacement (a - b + T) realizing the minimum."""
    fa = wrap_pi(np.asarray(frac_a, dtype=np.float64))
    fb = wrap_pi(np.asarray(frac_b, dtype=np.float64))
    dist, vec = _min_image(lattice, fa - fb)
    return float(dist), vec


def min_image_distance_matrix(lattice: Lattice, fracs_a, fracs_b) -> np.ndarray:
    """(len(a), len(b)) matrix of minimum-image distances."""
    fa = wrap_pi(np.asarray(fracs_a, dtype=np.float64))
    fb = wrap_pi(np.asarray(fracs_b, dtype=np.float64))
    dist, _ = _min_image(lattice, fa[:, None, :] - fb[None, :, :])
    return dist


def _metric_entries(basis: np.ndarray):
    a, b, c = basis
    return (a @ a, b @ b, c @ c, 2.0 * (b @ c), 2.0 * (a @ c), 2.0 * (a @ b))


def _sign_with_tol(x: float, eps: float) -> int:
    if x > eps:
        return 1
    if x < -eps:
        return -1
    return 0


def niggli_reduce_with_transform(
    lattice: Lattice,
    tol: float = NIGGLI_TOL,
    max_iter: int = NIGGLI_MAX_ITER,
) -> tuple[Lattice, np.ndarray]:
    """Niggli reduction returning the reduced lattice and the integer
    basis change ``M`` (det +1) with ``reduced rows ~ M @ original rows``.

    Fractional coordinates transform as ``frac_reduced = frac @ inv(M)``
    (wrap afterwards).  The reduced lattice is rebuilt from its cell
    parameters, i.e. rotated to the canonical orientation; fractional
    coordinates are unaffected by that rotation.

    Follows the Krivy-Gruber iteration with tolerance
    ``eps = tol * V^(2/3)`` on the squared-length metric entries.
    """
    L0 = lattice.matrix
    vol = lattice.volume
    eps = tol * vol ** (2.0 / 3.0)
    M = np.eye(3, dtype=np.int64)

    def current():
        return _metric_entries(M.astype(np.float64) @ L0)

    def apply(T):
        nonlocal M
        M = np.asarray(T, dtype=np.int64) @ M

    A, B, C, xi, eta, zeta = current()
    for _ in range(max_iter):
        changed = False

        # A1: order the first two vectors.
        if A > B + eps or (abs(A - B) <= eps and abs(xi) > abs(eta) + eps):
            apply([[0, -1, 0], [-1, 0, 0], [0, 0, -1]])
            A, B, C, xi, eta, zeta = current()
            changed = True
        # A2: order the last two vectors (and restart the ordering).
        if B > C + eps or (abs(B - C) <= eps and abs(eta) > abs(zeta) + eps):
            apply([[-1, 0, 0], [0, 0, -1], [0, -1, 0]])
            A, B, C, xi, eta, zeta = current()
            continue

        # A3/A4: normalize the signs of (xi, eta, zeta) to all-positive when
        # their sign product is positive, to all-non-positive otherwise.
        l, m, n = (_sign_with_tol(v, eps) for v in (xi, eta, zeta))
        want_positive = (l * m * n == 1)
        best = None
        for i, j, k in itertools.product((1, -1), repeat=3):
            if i * j * k != 1:
                continue
            nxi, neta, nzeta = j * k * xi, i * k * eta, i * j * zeta
            ok = (min(nxi, neta, nzeta) >= -eps if want_positive
                  else max(nxi, neta, nzeta) <= eps)
            if ok:
                best = (i, j, k)
                break
        if best is None:
            raise ReductionError("sign normalization failed; inconsistent metric")
        if best != (1, 1, 1):
            i, j, k = best
            apply(np.diag([i, j, k]))
            A, B, C, xi, eta, zeta = current()
            changed = True

        # A5-A7: shear the longest vectors against the shorter ones.
        if (abs(xi) > B + eps
                or (abs(xi - B) <= eps and 2 * eta < zeta - eps)
                or (abs(xi + B) <= eps and zeta < -eps)):
            s = 1 if xi > 0 else -1
            apply([[1, 0, 0], [0, 1, 0], [0, -s, 1]])
            A, B, C, xi, eta, zeta = current()
            continue
        if (abs(eta) > A + eps
                or (abs(eta - A) <= eps and 2 * xi < zeta - eps)
                or (abs(eta + A) <= eps and zeta < -eps)):
            s = 1 if eta > 0 else -1
            apply([[1, 0, 0], [0, 1, 0], [-s, 0, 1]])
            A, B, C, xi, eta, zeta = current()
            continue
        if (abs(zeta) > A + eps
                or (abs(zeta - A) <= eps and 2 * xi < eta - eps)
                or (abs(zeta + A) <= eps and eta < -eps)):
            s = 1 if zeta > 0 else -1
            apply([[1, 0, 0], [-s, 1, 0], [0, 0, 1]])
            A, B, C, xi, eta, zeta = current()
            continue
        # A8: total fold.
        total = xi + eta + zeta + A + B
        if total < -eps or (abs(total) <= eps and 2 * (A + eta) + zeta > eps):
            apply([[1, 0, 0], [0, 1, 0], [1, 1, 1]])
            A, B, C, xi, eta, zeta = current()
            continue

        if not changed:
            if int(round(np.linalg.det(M))) == -1:
                M = -M
            reduced_basis = M.astype(np.float64) @ L0
            reduced = Lattice.from_parameters(*params_from_matrix(reduced_basis))
            return reduced, M

    raise ReductionError(
        f"Niggli reduction did not converge within {max_iter} iterations")


def niggli_reduce(lattice: Lattice, tol: float = NIGGLI_TOL,
                  max_iter: int = NIGGLI_MAX_ITER) -> Lattice:
    """Niggli-reduced form of ``lattice`` (shortest, canonically ordered
    basis spanning the same lattice; volume preserved)."""
    reduced, _ = niggli_reduce_with_transform(lattice, tol=tol, max_iter=max_iter)
    return reduced


def build_periodic_graph(structure: CrystalStructure, cutoff: float,
                         max_neighbors: int) -> PeriodicGraph:
    """Neighbor list over periodic images within ``cutoff`` Angstrom.

    Every image pair with ``0 < d <= cutoff`` is considered; each node
    keeps its ``max_neighbors`` nearest, with ties broken by
    (d, T lexicographic, neighbor index) so graphs are reproducible.  The
    kept set is then closed under edge reversal, which can leave some
    nodes with more than ``max_neighbors`` edges.

    Raises ``DegenerateStructureError`` when two distinct atoms (or an
    atom and its own image) coincide.
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if max_neighbors < 1:
        raise ValueError("max_neighbors must be at least 1")
    lat = structure.lattice
    frac = structure.frac_coords
    n = structure.n_atoms

    heights = lat.plane_heights()
    n_img = np.ceil(cutoff / heights).astype(int) + 1
    shifts = np.array(list(itertools.product(
        range(-n_img[0], n_img[0] + 1),
        range(-n_img[1], n_img[1] + 1),
        range(-n_img[2], n_img[2] + 1))), dtype=np.float64)

    dfrac = frac[:, None, None, :] - frac[None, :, None, :] + shifts[None, None, :, :]
    cart = dfrac @ lat.matrix
    dist = np.linalg.norm(cart, axis=-1)

    same_site = np.zeros_like(dist, dtype=bool)
    zero_shift = np.all(shifts == 0, axis=1)
    same_site[np.arange(n), np.arange(n), :] |= zero_shift[None, :]
    if np.any(dist[~same_site] < 1e-8):
        raise DegenerateStructureError(
            "two atoms (or periodic images) coincide; cannot build a graph")

    within = (dist <= cutoff) & ~same_site
    idx_m, idx_n, idx_img = np.nonzero(within)
    if idx_m.size:
        d_all = dist[idx_m, idx_n, idx_img]
        t_all = shifts[idx_img].astype(np.int64)
        order = np.lexsort((idx_n, t_all[:, 2], t_all[:, 1], t_all[:, 0], d_all, idx_m))
        m_sorted = idx_m[order]
        group_start = np.searchsorted(m_sorted, m_sorted, side="left")
        rank = np.arange(m_sorted.size) - group_start
        keep = order[rank < max_neighbors]

        rows = np.column_stack([idx_m[keep], idx_n[keep], t_all[keep]])
        reversed_rows = np.column_stack([rows[:, 1], rows[:, 0], -rows[:, 2:]])
        edges = np.unique(np.concatenate([rows, reversed_rows]), axis=0)

        src = edges[:, 0]
        dst = edges[:, 1]
        shift = edges[:, 2:].astype(np.float64)
        vec = (frac[src] - frac[dst] + shift) @ lat.matrix
        length = np.linalg.norm(vec, axis=1)
    else:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
        shift = np.zeros((0, 3), dtype=np.float64)
        vec = np.zeros((0, 3), dtype=np.float64)
        length = np.zeros(0, dtype=np.float64)

    return PeriodicGraph(
        n_nodes=n, edge_src=src, edge_dst=dst, edge_shift=shift,
        edge_vec=vec, edge_len=length)
