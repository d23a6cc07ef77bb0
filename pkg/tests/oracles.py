"""Independent oracles used by the test suite.

Everything here is deliberately naive (explicit loops, dense quadrature,
finite differences) and never imports the code paths it checks beyond the
plain data containers.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from phi4lattice.lattice import LatticeGrid


def laplacian_loops(values: np.ndarray, eps: float) -> np.ndarray:
    """Nearest-neighbour stencil by explicit site loops."""
    shape = values.shape
    out = np.zeros_like(values)
    for idx in np.ndindex(*shape):
        acc = 0.0
        for axis in range(len(shape)):
            for sign in (-1, 1):
                nb = list(idx)
                nb[axis] = (nb[axis] + sign) % shape[axis]
                acc += values[tuple(nb)]
            acc -= 2.0 * values[idx]
        out[idx] = acc / eps**2
    return out


def dot_loops(f: np.ndarray, g: np.ndarray) -> float:
    total = 0.0
    for a, b in zip(f.reshape(-1), g.reshape(-1)):
        total += a * b
    return total


def central_difference(func, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    return (func(x + h) - func(x - h)) / (2.0 * h)


def box_volume_quadrature(eps: float, d: int, n: int = 64) -> float:
    """Volume of one cell by midpoint quadrature (oracle for eps^d)."""
    h = eps / n
    return (h * n) ** d


def gibbs_density_exponent(phi: np.ndarray, eps: float, counterterm: float) -> np.ndarray:
    """Minus log-density (up to a constant) of the d=1 chain's invariant law.

    The chain ``du = [lap u + ct u - u^3] dt + dxi`` with per-site noise
    variance ``eps^-1 dt`` has invariant density ``exp(-2 eps H(phi))`` with
    ``H = sum (grad^2/(2 eps^2) - ct phi^2/2 + phi^4/4)``.
    """
    grad = np.diff(np.concatenate([phi, phi[..., :1]], axis=-1), axis=-1)
    h = (
        (grad**2).sum(axis=-1) / (2.0 * eps**2)
        - 0.5 * counterterm * (phi**2).sum(axis=-1)
        + 0.25 * (phi**4).sum(axis=-1)
    )
    return 2.0 * eps * h


class GibbsQuadrature:
    """Dense Gauss-Legendre quadrature for the d=1 lattice Gibbs measure.

    Supports the tilted measure ``exp(-2 eps H + 2 beta F_n(X))`` where
    ``X = eps * sum psi_eps * phi`` is the embedded pairing.
    """

    def __init__(self, grid: LatticeGrid, counterterm: float, bound: float = 4.5,
                 order: int = 48):
        if grid.d != 1:
            raise ValueError("quadrature oracle is one-dimensional")
        self.grid = grid
        self.counterterm = counterterm
        nodes, weights = np.polynomial.legendre.leggauss(order)
        self.nodes = nodes * bound
        self.weights = weights * bound
        n = grid.sites_per_axis
        pts = np.array(list(itertools.product(self.nodes, repeat=n)))
        wts = np.array(list(itertools.product(self.weights, repeat=n))).prod(axis=1)
        log_dens = -gibbs_density_exponent(pts, grid.eps, counterterm)
        self._pts = pts
        self._log_base = log_dens + np.log(wts)

    def expectation(self, func, log_tilt=None) -> float:
        logw = self._log_base.copy()
        if log_tilt is not None:
            logw = logw + log_tilt(self._pts)
        logw -= logw.max()
        w = np.exp(logw)
        return float(np.sum(w * func(self._pts)) / np.sum(w))

    def pairing(self, psi_eps: np.ndarray) -> np.ndarray:
        return self.grid.eps * self._pts @ psi_eps


def seminorm_brute(
    stored: dict[str, np.ndarray],
    c2: float,
    spatial_kernels: list[np.ndarray],
    time_kernels: list[np.ndarray],
    scales: list[float],
    exponent: float,
    tau: str,
) -> float:
    """Triple-loop evaluation of the dyadic seminorm on a tiny d=1 ensemble."""
    first = next(iter(stored.values()))
    n_t, n_x = first.shape

    def conv(arr: np.ndarray, kern_s: np.ndarray, kern_t: np.ndarray, t: int, x: int) -> float:
        pad = (len(kern_t) - 1) // 2
        total = 0.0
        for m, wt in enumerate(kern_t):
            tt = t + (m - pad)
            for y in range(n_x):
                total += wt * kern_s[(x - y) % n_x] * arr[tt, y]
        return total

    best = 0.0
    for idx, lam in enumerate(scales):
        ks, kt = spatial_kernels[idx], time_kernels[idx]
        pad = (len(kt) - 1) // 2
        for t in range(pad, n_t - pad):
            for x in range(n_x):
                if tau in ("2", "3"):
                    val = conv(stored[tau], ks, kt, t, x)
                elif tau in ("20", "30"):
                    val = conv(stored[tau], ks, kt, t, x) - stored[tau][t, x]
                elif tau == "22":
                    val = conv(stored["20"] * stored["2"] - c2, ks, kt, t, x) - stored["20"][
                        t, x
                    ] * conv(stored["2"], ks, kt, t, x)
                elif tau == "31":
                    val = conv(stored["30"] * stored["1"], ks, kt, t, x) - stored["30"][
                        t, x
                    ] * conv(stored["1"], ks, kt, t, x)
                elif tau == "32":
                    val = conv(stored["30"] * stored["2"], ks, kt, t, x) - stored["30"][
                        t, x
                    ] * conv(stored["2"], ks, kt, t, x)
                else:
                    raise ValueError(tau)
                best = max(best, lam**exponent * abs(val))
    return best


def survival_inverse_sample(rng: np.random.Generator, n: int, power: float) -> np.ndarray:
    """Samples with exact survival ``P(X > K) = exp(-K^power)`` for K >= 0."""
    u = rng.uniform(size=n)
    return (-np.log(u)) ** (1.0 / power)
