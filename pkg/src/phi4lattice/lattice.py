"""Dyadic torus geometry, lattice fields and lattice/continuum operators.

The torus [0, L)^d is discretised into ``(L/eps)^d`` cubic cells of side
``eps = 2^-N``.  Sites sit at cell centers ``x_i = (i + 1/2) eps`` and are
ordered lexicographically in ``(x_1, ..., x_d)``; every serialisation and
FFT layout follows that ordering.  Coordinates in the symmetric convention
``[-L/2, L/2)`` are obtained through :func:`LatticeGrid.to_symmetric_coords`.

Two pairings are provided and are deliberately distinct:

* ``discrete_pairing(f, g) = sum_y f(y) g(y)`` (no volume weight), and
* ``weighted_pairing(f, g) = eps^d sum_y f(y) g(y)``,

the latter being the one consistent with the piecewise-constant embedding:
``<iota f, psi> = weighted_pairing(f, psi_eps)`` whenever ``psi_eps`` holds
the cell averages of ``psi``.  Call sites must state which pairing they use.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "LatticeGrid",
    "Field",
    "BoxRegion",
    "TestFunction",
    "build_grid",
    "laplacian",
    "mu_symbol",
    "discrete_pairing",
    "weighted_pairing",
    "embed_pair",
    "scaled_test_function",
    "sample_test_function",
    "project",
    "iota_refine",
    "localize",
    "write_snapshot",
    "read_snapshot",
]

GL_ORDER = 4
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)

SNAPSHOT_MAGIC = b"PHI4"
SNAPSHOT_VERSION = 1
_HEADER_FMT = "<4sHBBddQ"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class GridError(ValueError):
    """Raised for invalid grid parameters or mismatched grids."""


@dataclass(frozen=True)
class LatticeGrid:
    """Geometry of the discretised torus [0, L)^d at dyadic level N.

    Attributes
    ----------
    d : int
        Spatial dimension (1, 2 or 3).
    L : float
        Torus side length (positive dyadic rational).
    N : int
        Dyadic refinement level; the grid scale is ``eps = 2^-N``.
    """

    d: int
    L: float
    N: int

    @property
    def eps(self) -> float:
        return 2.0 ** (-self.N)

    @property
    def sites_per_axis(self) -> int:
        return round(self.L / self.eps)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.sites_per_axis,) * self.d

    @property
    def n_sites(self) -> int:
        return self.sites_per_axis**self.d

    def axis_coords(self) -> np.ndarray:
        """Cell-center coordinates along one axis, in [0, L)."""
        n = self.sites_per_axis
        return (np.arange(n) + 0.5) * self.eps

    def site_coords(self) -> np.ndarray:
        """Array of shape ``shape + (d,)`` with the coordinates of every site."""
        axes = [self.axis_coords()] * self.d
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def to_symmetric_coords(self, x: np.ndarray) -> np.ndarray:
        """Map internal coordinates [0, L) to the symmetric window [-L/2, L/2)."""
        return np.mod(np.asarray(x) + self.L / 2.0, self.L) - self.L / 2.0

    def zero_field(self, time: float = 0.0) -> "Field":
        return Field(self, np.zeros(self.shape), time)

    def is_refinement_of(self, coarse: "LatticeGrid") -> bool:
        return self.d == coarse.d and self.L == coarse.L and self.N >= coarse.N


def build_grid(d: int, L: float, N: int) -> LatticeGrid:
    """Construct and validate a grid.

    Requires ``d in {1, 2, 3}``, ``N >= 2``, ``L`` a positive dyadic rational
    with ``L * 2^N`` integral, and at least 4 sites per axis.
    """
    if d not in (1, 2, 3):
        raise GridError(f"dimension must be 1, 2 or 3, got {d}")
    if N < 2:
        raise GridError(f"dyadic level must satisfy N >= 2, got {N}")
    if not (L > 0) or not math.isfinite(L):
        raise GridError(f"side length must be positive and finite, got {L}")
    sites = L * 2.0**N
    if abs(sites - round(sites)) > 1e-12 or round(sites) < 1:
        raise GridError(f"L={L} is not a dyadic multiple of eps=2^-{N}")
    sites = round(sites)
    if sites < 4:
        raise GridError(f"sites_per_axis = {sites} < 4 (grid too coarse)")
    if sites**d > 2**28:
        raise GridError(f"total site count {sites ** d} exceeds the supported budget")
    grid = LatticeGrid(d=d, L=float(L), N=int(N))
    assert grid.eps * grid.sites_per_axis == grid.L
    return grid


@dataclass
class Field:
    """Real scalar field on a lattice at one time instant."""

    grid: LatticeGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.time)

    def check_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned coordinate box, in the symmetric [-L/2, L/2) convention."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def mask(self, grid: LatticeGrid) -> np.ndarray:
        coords = grid.to_symmetric_coords(grid.site_coords())
        mask = np.ones(grid.shape, dtype=bool)
        for axis in range(grid.d):
            c = coords[..., axis]
            mask &= (c >= self.lo[axis]) & (c <= self.hi[axis])
        return mask


def _ensure_same_grid(f: Field, g: Field | np.ndarray) -> np.ndarray:
    if isinstance(g, Field):
        if g.grid != f.grid:
            raise GridError("fields live on different grids")
        return g.values
    g = np.asarray(g, dtype=np.float64)
    if g.shape != f.grid.shape:
        raise GridError(f"sampled function shape {g.shape} does not match grid")
    return g


def laplacian(f: Field) -> Field:
    """Nearest-neighbour Laplacian with periodic wraparound.

    ``(lap f)(x) = eps^-2 sum_i [f(x+eps e_i) + f(x-eps e_i) - 2 f(x)]``.
    """
    v = f.values
    out = np.zeros_like(v)
    for axis in range(f.grid.d):
        out += np.roll(v, 1, axis=axis) + np.roll(v, -1, axis=axis) - 2.0 * v
    out /= f.grid.eps**2
    return Field(f.grid, out, f.time)


def mu_symbol(grid: LatticeGrid) -> np.ndarray:
    """Fourier symbol of ``-laplacian``: mu(k) = (4/eps^2) sum_i sin^2(pi k_i / n).

    Indexed by the FFT mode grid (shape ``grid.shape``); mu(0) = 0 and
    mu(k) > 0 otherwise.  A plane wave ``Re exp(2 pi i k.x / L)`` is an
    eigenvector of the lattice Laplacian with eigenvalue ``-mu(k)``.
    """
    n = grid.sites_per_axis
    k = np.arange(n)
    s = (4.0 / grid.eps**2) * np.sin(np.pi * k / n) ** 2
    total = np.zeros(grid.shape)
    for axis in range(grid.d):
        sh = [1] * grid.d
        sh[axis] = n
        total = total + s.reshape(sh)
    return total


def discrete_pairing(f: Field, g: Field | np.ndarray) -> float:
    """Unweighted pairing ``sum_y f(y) g(y)`` (no eps^d factor)."""
    gv = _ensure_same_grid(f, g)
    return float(np.sum(f.values * gv))


def weighted_pairing(f: Field, g: Field | np.ndarray) -> float:
    """Volume-weighted pairing ``eps^d sum_y f(y) g(y)``.

    This is the pairing consistent with the piecewise-constant embedding.
    """
    gv = _ensure_same_grid(f, g)
    return float(f.grid.eps**f.grid.d * np.sum(f.values * gv))


def _box_integrals(grid: LatticeGrid, phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Integral of ``phi`` over every lattice cell, by tensorised Gauss-Legendre.

    Exact for per-cell polynomials up to degree 2*GL_ORDER-1 per axis, and in
    particular for per-cell-constant integrands.
    """
    half = grid.eps / 2.0
    centers = grid.site_coords()
    offsets_1d = _GL_NODES * half
    weights_1d = _GL_WEIGHTS * half
    integrals = np.zeros(grid.shape)
    for idx in np.ndindex(*(GL_ORDER,) * grid.d):
        offset = np.array([offsets_1d[i] for i in idx])
        w = float(np.prod([weights_1d[i] for i in idx]))
        pts = centers + offset
        vals = phi(pts.reshape(-1, grid.d)).reshape(grid.shape)
        integrals += w * vals
    return integrals


def embed_pair(
    f: Field,
    phi: Callable[[np.ndarray], np.ndarray],
    z: Sequence[float] | None = None,
    lam: float | None = None,
) -> float:
    """Pair the piecewise-constant extension of ``f`` with a test function.

    Returns ``sum_y f(y) * integral over the cell of y of phi_z^lam`` where
    ``phi_z^lam(y) = lam^-d phi((y - z)/lam)`` (spatial min-image scaling on
    the torus) when a base point ``z`` and scale ``lam`` are given, and plain
    ``phi`` otherwise.  Exact for per-cell-constant integrands.
    """
    if lam is not None:
        if not (0.0 < lam <= f.grid.L / 2.0):
            raise GridError(f"scale lam={lam} outside (0, L/2]")
        phi = scaled_test_function(phi, np.asarray(z, dtype=float), lam, f.grid.L, f.grid.d)
    integrals = _box_integrals(f.grid, phi)
    if not np.all(np.isfinite(integrals)):
        raise GridError("quadrature produced non-finite values (degenerate phi)")
    return float(np.sum(f.values * integrals))


def scaled_test_function(
    phi: Callable[[np.ndarray], np.ndarray],
    z: np.ndarray,
    lam: float,
    L: float,
    d: int,
) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``y -> lam^-d phi((y - z)/lam)`` with torus min-image differences."""

    def shifted(points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, d)
        diff = np.mod(pts - z + L / 2.0, L) - L / 2.0
        return lam ** (-d) * np.asarray(phi(diff / lam))

    return shifted


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported radial bump with certified bounds.

    ``psi(x) = amplitude * exp(1 - 1/(1 - s^2))`` for ``s = |x - center|_2 /
    radius < 1`` and 0 otherwise.  ``sup_norm`` and ``grad_sup_norm`` are
    numerically certified upper bounds, kept <= 1 by the default constructor.
    """

    center: tuple[float, ...]
    radius: float
    amplitude: float
    sup_norm: float
    grad_sup_norm: float

    # max_s |d/ds exp(1 - 1/(1-s^2))| on [0, 1), certified on a dense grid
    _PROFILE_GRAD_MAX = 2.1704

    @classmethod
    def bump(
        cls,
        d: int,
        center: Sequence[float] | None = None,
        radius: float = 0.35,
        amplitude: float | None = None,
    ) -> "TestFunction":
        """Bump normalised so that ``|psi| <= 1`` and ``|D psi| <= 1``."""
        if center is None:
            center = (0.0,) * d
        if amplitude is None:
            amplitude = min(1.0, 0.99 * radius / cls._PROFILE_GRAD_MAX)
        sup = amplitude
        grad = amplitude * cls._PROFILE_GRAD_MAX / radius
        if sup > 1.0 + 1e-12 or grad > 1.0 + 1e-12:
            raise ValueError(
                f"bump certificates exceed 1 (sup={sup:.3g}, grad={grad:.3g}); "
                "reduce the amplitude or enlarge the radius"
            )
        return cls(tuple(float(c) for c in center), float(radius), float(amplitude), sup, grad)

    @property
    def d(self) -> int:
        return len(self.center)

    def __call__(self, points: np.ndarray, L: float | None = None) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        squeeze = pts.ndim == 1
        pts = pts.reshape(-1, self.d)
        diff = pts - np.asarray(self.center)
        if L is not None:
            diff = np.mod(diff + L / 2.0, L) - L / 2.0
        s2 = np.sum(diff**2, axis=1) / self.radius**2
        out = np.zeros(len(pts))
        inside = s2 < 1.0
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - s2[inside]))
        return out[0] if squeeze else out

    def fits_in_torus(self, L: float) -> bool:
        return self.radius <= L / 2.0

    def integral(self, L: float, n_points: int = 512) -> float:
        """Total integral over the torus, by tensorised midpoint quadrature."""
        h = L / n_points
        axis = (np.arange(n_points) + 0.5) * h
        mesh = np.meshgrid(*([axis] * self.d), indexing="ij")
        pts = np.stack(mesh, axis=-1).reshape(-1, self.d)
        return float(np.sum(self(pts, L=L)) * h**self.d)


def sample_test_function(psi: TestFunction, grid: LatticeGrid) -> np.ndarray:
    """Cell averages ``psi_eps(y) = eps^-d integral over the cell of psi``.

    Satisfies ``|psi_eps(y)| <= sup |psi|``; the pairing identity
    ``weighted_pairing(f, psi_eps) == embed_pair(f, psi)`` holds by
    construction (same quadrature rule on both sides).
    """
    if psi.d != grid.d:
        raise GridError(f"test function dimension {psi.d} != grid dimension {grid.d}")
    if not psi.fits_in_torus(grid.L):
        raise GridError(f"support of radius {psi.radius} does not fit in torus L={grid.L}")
    integrals = _box_integrals(grid, lambda pts: psi(pts, L=grid.L))
    return integrals / grid.eps**grid.d


def iota_refine(f: Field, levels: int = 1) -> Field:
    """Piecewise-constant extension of ``f`` onto a 2^levels finer grid.

    Realises the embedding concretely between nested lattices: each cell
    value is replicated onto its ``2^(levels*d)`` child cells.
    """
    if levels < 0:
        raise GridError("levels must be nonnegative")
    grid = f.grid
    fine = LatticeGrid(grid.d, grid.L, grid.N + levels)
    r = 2**levels
    v = f.values
    for axis in range(grid.d):
        v = np.repeat(v, r, axis=axis)
    return Field(fine, v, f.time)


def project(zeta: Field | Callable[[np.ndarray], np.ndarray], grid: LatticeGrid) -> Field:
    """Box-averaging projection onto ``grid``: ``eps^-d * integral over cells``.

    For a dyadically finer lattice field this is the exact block average and
    is a left inverse of :func:`iota_refine`.  For a callable it uses the
    fixed-order Gauss-Legendre cell quadrature.
    """
    if isinstance(zeta, Field):
        if not zeta.grid.is_refinement_of(grid):
            raise GridError(
                f"input grid (d={zeta.grid.d}, L={zeta.grid.L}, N={zeta.grid.N}) is not a "
                f"dyadic refinement of the target (d={grid.d}, L={grid.L}, N={grid.N})"
            )
        r = 2 ** (zeta.grid.N - grid.N)
        v = zeta.values
        n = grid.sites_per_axis
        new_shape: list[int] = []
        for _ in range(grid.d):
            new_shape.extend([n, r])
        v = v.reshape(new_shape)
        for axis in range(grid.d):
            v = v.mean(axis=axis + 1)
        return Field(grid, v, zeta.time)
    integrals = _box_integrals(grid, zeta)
    return Field(grid, integrals / grid.eps**grid.d)


def localize(f: Field, region: BoxRegion | None) -> Field:
    """Zero the field outside ``region`` (multiplication by the indicator).

    ``region=None`` means the whole torus (identity).  Idempotent and
    commuting with scalar multiplication.
    """
    if region is None:
        return f.copy()
    mask = region.mask(f.grid)
    return Field(f.grid, np.where(mask, f.values, 0.0), f.time)


def write_snapshot(path, f: Field, seed: int = 0) -> None:
    """Serialise a field: PHI4 header + little-endian f64 lexicographic values."""
    header = struct.pack(
        _HEADER_FMT,
        SNAPSHOT_MAGIC,
        SNAPSHOT_VERSION,
        f.grid.d,
        f.grid.N,
        f.grid.L,
        f.time,
        seed & 0xFFFFFFFFFFFFFFFF,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(f.values.astype("<f8").tobytes(order="C"))


def read_snapshot(path) -> tuple[Field, int]:
    """Inverse of :func:`write_snapshot`; returns ``(field, seed)``."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER_SIZE)
        magic, version, d, N, L, time, seed = struct.unpack(_HEADER_FMT, raw)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r}")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        grid = LatticeGrid(d=d, L=L, N=N)
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(grid.shape).copy()
    return Field(grid, values, time), seed
