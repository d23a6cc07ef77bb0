"""Truncated quartic potentials and the quartic observables they generate.

``TruncatedPotential(n)`` is the C^1 even function equal to ``x^4/4`` on
``|x| <= n`` and to the plateau ``n^4/4 + 1`` on ``|x| >= n+1``, joined on
``[n, n+1]`` by a quintic Hermite blend matching value and slope at both
ends (and curvature at the plateau end, so the landing is flat).  ``n = inf``
gives the plain quartic.

The derivative cap ``|F_n'| <= n^3`` holds for every n >= 2: the blend slope
is ``n^3 (1 - 18 s^2 + 32 s^3 - 15 s^4) + 30 s^2 (1-s)^2``, whose first term
starts at the cap and decreases while the correction is dominated once
``n^3 >= 30/18``.  For n = 1 the cap is unattainable by any C^1 function
with these boundary data: the blend must climb by exactly 1 over a width-1
interval at slope cap 1, which forces ``F' = 1`` identically and contradicts
the flat landing.  The n = 1 blend realises ``sup |F_1'| < 1.52``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lattice import Field, mu_symbol, weighted_pairing, TestFunction

__all__ = ["TruncatedPotential", "Observable", "eval_V", "eval_W", "sobolev_norm_sq"]


def _blend_coefficients(n: int) -> np.ndarray:
    """Quintic coefficients (a, b, c) for h(s) = F(n) + n^3 s + a s^3 + b s^4
    + c s^5 on the unit blend interval, with h(1) = n^4/4 + 1, h'(1) = 0,
    h''(1) = 0.  Closed form: a = 10 - 6 n^3, b = 8 n^3 - 15, c = 6 - 3 n^3."""
    r1 = 1.0 - n**3
    r2 = -float(n**3)
    r3 = 0.0
    m = np.array([[1.0, 1.0, 1.0], [3.0, 4.0, 5.0], [6.0, 12.0, 20.0]])
    return np.linalg.solve(m, np.array([r1, r2, r3]))


@dataclass(frozen=True)
class TruncatedPotential:
    """Even C^2 truncation of x^4/4 with a bounded derivative."""

    n: float  # positive integer or math.inf
    _abc: tuple[float, float, float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n != math.inf:
            if self.n != int(self.n) or self.n < 1:
                raise ValueError(f"truncation index must be a positive integer or inf, got {self.n}")
            abc = _blend_coefficients(int(self.n))
            object.__setattr__(self, "_abc", (float(abc[0]), float(abc[1]), float(abc[2])))
        else:
            object.__setattr__(self, "_abc", (0.0, 0.0, 0.0))

    @property
    def plateau(self) -> float:
        if self.n == math.inf:
            return math.inf
        return self.n**4 / 4.0 + 1.0

    def value(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        if self.n == math.inf:
            out = 0.25 * ax**4
        else:
            n = self.n
            a, b, c = self._abc
            s = np.clip(ax - n, 0.0, 1.0)
            blend = 0.25 * n**4 + n**3 * s + a * s**3 + b * s**4 + c * s**5
            out = np.select(
                [ax <= n, ax >= n + 1.0],
                [0.25 * ax**4, self.plateau],
                default=blend,
            )
        return out if out.ndim else float(out)

    def deriv(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        sign = np.sign(x)
        ax = np.abs(x)
        if self.n == math.inf:
            out = sign * ax**3
        else:
            n = self.n
            a, b, c = self._abc
            s = np.clip(ax - n, 0.0, 1.0)
            blend = n**3 + 3.0 * a * s**2 + 4.0 * b * s**3 + 5.0 * c * s**4
            out = sign * np.select(
                [ax <= n, ax >= n + 1.0],
                [ax**3, 0.0],
                default=blend,
            )
        return out if out.ndim else float(out)

    def derivative_sup(self, n_points: int = 100_001) -> float:
        """Numerical sup of |F'| (attained in [0, n+1] by evenness and the plateau)."""
        if self.n == math.inf:
            return math.inf
        x = np.linspace(0.0, self.n + 1.0, n_points)
        return float(np.max(np.abs(self.deriv(x))))

    __call__ = value


@dataclass(frozen=True)
class Observable:
    """Quartic observable: pairing type 'V' or Sobolev type 'W'.

    'V' is ``(beta/4) <iota f, psi>^4`` through the volume-weighted pairing
    with the cell averages of ``psi``; 'W' is ``(beta/4)`` times the squared
    homogeneous negative-Sobolev norm, computed as a Fourier multiplier with
    the zero mode excluded.
    """

    kind: str
    beta: float
    psi: TestFunction | None = None
    alpha: float = 0.6

    def __post_init__(self) -> None:
        if self.kind not in ("V", "W"):
            raise ValueError(f"observable kind must be 'V' or 'W', got {self.kind!r}")
        if not self.beta > 0:
            raise ValueError(f"coupling beta must be positive, got {self.beta}")
        if self.kind == "V" and self.psi is None:
            raise ValueError("observable 'V' requires a test function")
        if self.kind == "W" and not self.alpha > 0:
            raise ValueError(f"observable 'W' requires alpha > 0, got {self.alpha}")


def eval_V(obs: Observable, f: Field, psi_eps: np.ndarray) -> float:
    """``(beta/4) * weighted_pairing(f, psi_eps)^4``."""
    if obs.kind != "V":
        raise ValueError("eval_V needs an observable of kind 'V'")
    x = weighted_pairing(f, psi_eps)
    return 0.25 * obs.beta * x**4


def sobolev_norm_sq(f: Field, alpha: float, symbol: str = "lattice") -> float:
    """Squared negative-Sobolev norm ``sum_{k != 0} |fhat(k)|^2 mu(k)^-alpha``.

    ``fhat`` is the transform unitary for the eps^d-weighted inner product
    (``sum |fhat|^2 = eps^d sum f^2``), so at ``alpha = 0`` the value equals
    ``eps^d sum (f - mean f)^2``.  ``symbol='continuum'`` replaces the
    lattice dispersion by ``|2 pi k / L|^2`` for refinement studies.
    """
    grid = f.grid
    if symbol == "lattice":
        mu = mu_symbol(grid)
    elif symbol == "continuum":
        n = grid.sites_per_axis
        k = np.fft.fftfreq(n, d=1.0 / n)
        mu = np.zeros(grid.shape)
        for axis in range(grid.d):
            sh = [1] * grid.d
            sh[axis] = n
            mu = mu + ((2.0 * np.pi / grid.L) ** 2 * k**2).reshape(sh)
    else:
        raise ValueError(f"unknown symbol {symbol!r}")
    fhat = np.fft.fftn(f.values) * np.sqrt(grid.eps**grid.d / grid.n_sites)
    power = np.abs(fhat) ** 2
    mult = np.zeros_like(mu)
    nonzero = mu > 0
    mult[nonzero] = mu[nonzero] ** (-alpha)
    return float(np.sum(power * mult))


def eval_W(obs: Observable, f: Field, symbol: str = "lattice") -> float:
    """``(beta/4) * (sobolev_norm_sq(f, alpha))^2`` with the zero mode excluded."""
    if obs.kind != "W":
        raise ValueError("eval_W needs an observable of kind 'W'")
    return 0.25 * obs.beta * sobolev_norm_sq(f, obs.alpha, symbol=symbol) ** 2
