"""Scalar Gaussian machinery and small dense linear algebra shared by all modules.

The truncated-normal moment routine is the workhorse behind the componentwise
MMSE denoiser: it must stay finite and accurate for cells anywhere on the real
line, including far-tail cells produced by one-bit observations at high SNR.
Three evaluation branches cover the regimes:

* cells straddling the mean: plain CDF differences,
* one-sided cells up to ~30 standard deviations out: scaled-erfc (erfcx) form,
* beyond that: Gauss-Legendre quadrature of the exponentially tilted density,
  which is the Mills-ratio asymptotic regime evaluated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr

__all__ = [
    "EmptyCellError",
    "GaussInterval",
    "trunc_gauss_moments",
    "trunc_gauss_moments_arrays",
    "hermitian_eig",
    "least_squares",
]

_SQRT2 = np.sqrt(2.0)
_SQRT_2PI = np.sqrt(2.0 * np.pi)
_INV_SQRT_2PI = 1.0 / _SQRT_2PI

# switch to the tilted-quadrature branch once both standardized endpoints are
# this far into one tail; the erfcx form loses ~a^2 * eps to cancellation
_FAR_TAIL = 30.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(80)
# exp(-tau) is below 3e-20 past this point, so nothing beyond contributes
_TAIL_SUPPORT = 45.0


class EmptyCellError(ArithmeticError):
    """Raised when an interval's probability mass underflows to zero."""


@dataclass(frozen=True)
class GaussInterval:
    """Half-open interval [lo, hi) of the real line; endpoints may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"interval requires lo < hi, got [{self.lo}, {self.hi})")

    @property
    def midpoint(self) -> float:
        """Finite representative point; edge cells fall back to the finite endpoint."""
        if np.isinf(self.lo) and np.isinf(self.hi):
            return 0.0
        if np.isinf(self.lo):
            return self.hi - 1.0
        if np.isinf(self.hi):
            return self.lo + 1.0
        return 0.5 * (self.lo + self.hi)


def _std_moments(a: np.ndarray, b: np.ndarray):
    """Moments of N(0,1) truncated to [a, b), elementwise.

    Returns (mean, var, log_mass). Assumes a < b elementwise; infinite
    endpoints allowed. Inputs must be float arrays of identical shape.
    """
    mean = np.full(a.shape, np.nan)
    var = np.full(a.shape, np.nan)
    logm = np.full(a.shape, np.nan)

    # mirror cells in the negative tail onto the positive one
    neg = b <= 0.0
    aa = np.where(neg, -b, a)
    bb = np.where(neg, -a, b)

    straddle = aa < 0.0
    pos = ~straddle & (aa < _FAR_TAIL)
    far = ~straddle & ~pos

    if np.any(straddle):
        av, bv = aa[straddle], bb[straddle]
        z = ndtr(bv) - ndtr(av)
        fin_a, fin_b = np.isfinite(av), np.isfinite(bv)
        pa = np.where(fin_a, _INV_SQRT_2PI * np.exp(-0.5 * np.square(np.where(fin_a, av, 0.0))), 0.0)
        pb = np.where(fin_b, _INV_SQRT_2PI * np.exp(-0.5 * np.square(np.where(fin_b, bv, 0.0))), 0.0)
        r1 = (pa - pb) / z
        r2 = (np.where(fin_a, av, 0.0) * pa - np.where(fin_b, bv, 0.0) * pb) / z
        mean[straddle] = r1
        var[straddle] = 1.0 + r2 - r1 * r1
        logm[straddle] = np.log(z)

    if np.any(pos):
        av, bv = aa[pos], bb[pos]
        fin = np.isfinite(bv)
        bs = np.where(fin, bv, 0.0)
        ea = erfcx(av / _SQRT2)
        # d = exp((a^2-b^2)/2) <= 1; factoring exp(-a^2/2) out keeps everything scaled
        d = np.where(fin, np.exp(0.5 * (av - bs) * (av + bs)), 0.0)
        eb = np.where(fin, erfcx(bs / _SQRT2), 0.0)
        denom = 0.5 * (ea - d * eb)
        r1 = _INV_SQRT_2PI * (1.0 - d) / denom
        r2 = _INV_SQRT_2PI * (av - bs * d) / denom
        mean[pos] = r1
        var[pos] = 1.0 + r2 - r1 * r1
        logm[pos] = -0.5 * av * av + np.log(denom)

    if np.any(far):
        av, bv = aa[far], bb[far]
        # substitute tau = a (x - a): density on [0, a(b-a)) is
        # proportional to exp(-tau - tau^2 / (2 a^2)); integrate exactly
        width = np.where(np.isfinite(bv), av * (bv - av), np.inf)
        hi = np.minimum(width, _TAIL_SUPPORT)
        tau = 0.5 * hi[:, None] * (_GL_NODES[None, :] + 1.0)
        wt = 0.5 * hi[:, None] * _GL_WEIGHTS[None, :]
        with np.errstate(over="ignore", invalid="ignore"):
            f = wt * np.exp(-tau - 0.5 * np.square(tau / av[:, None]))
            m0 = np.sum(f, axis=1)
            m1 = np.sum(tau * f, axis=1)
            m2 = np.sum(tau * tau * f, axis=1)
            eu = m1 / m0 / av
            eu2 = m2 / m0 / (av * av)
            mean[far] = av + eu
            var[far] = eu2 - eu * eu
            logm[far] = -0.5 * av * av - np.log(_SQRT_2PI) + np.log(m0) - np.log(av)

    mean = np.where(neg, -mean, mean)
    return mean, var, logm


def trunc_gauss_moments_arrays(lo, hi, mu, v):
    """Vectorized truncated-normal moments for N(mu, v) on [lo, hi).

    All arguments broadcast together. Degenerate cells (mass underflow or
    non-finite intermediates, possible only at absurd standardizations) come
    back as NaN in all three outputs; callers decide how to clamp.

    Returns (mean, var, log_mass) as float arrays.
    """
    lo, hi, mu, v = np.broadcast_arrays(
        np.asarray(lo, float), np.asarray(hi, float),
        np.asarray(mu, float), np.asarray(v, float))
    s = np.sqrt(v)
    with np.errstate(invalid="ignore", over="ignore"):
        a = np.where(np.isneginf(lo), -np.inf, (lo - mu) / s)
        b = np.where(np.isposinf(hi), np.inf, (hi - mu) / s)
        m, var, logm = _std_moments(a, b)
        mean = mu + s * m
        var = v * var
    unbounded = np.isneginf(a) & np.isposinf(b)
    mean = np.where(unbounded, mu, mean)
    var = np.where(unbounded, v, var)
    logm = np.where(unbounded, 0.0, logm)
    bad = ~(np.isfinite(mean) & np.isfinite(var) & (var > 0.0))
    if np.any(bad):
        mean = np.where(bad, np.nan, mean)
        var = np.where(bad, np.nan, var)
        logm = np.where(bad, np.nan, logm)
    return mean, var, logm


def trunc_gauss_moments(interval: GaussInterval, mu: float, v: float):
    """Mean, variance, and log-mass of N(mu, v) truncated to the interval.

    Raises EmptyCellError if the cell's probability mass underflows so badly
    that no finite moments can be produced.
    """
    if v <= 0.0:
        raise ValueError(f"variance must be positive, got {v}")
    mean, var, logm = trunc_gauss_moments_arrays(
        np.array([interval.lo]), np.array([interval.hi]),
        np.array([float(mu)]), np.array([float(v)]))
    if not np.isfinite(mean[0]):
        raise EmptyCellError(
            f"cell [{interval.lo}, {interval.hi}) has vanishing mass under "
            f"N({mu}, {v})")
    return float(mean[0]), float(var[0]), float(logm[0])


def hermitian_eig(mat: np.ndarray):
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    The input is symmetrized first, so tiny Hermiticity violations from
    accumulated roundoff are tolerated. Returns (eigenvalues, eigenvectors)
    with mat ~ W diag(lam) W^H.
    """
    mat = np.asarray(mat)
    herm_err = np.linalg.norm(mat - mat.conj().T)
    scale = max(np.linalg.norm(mat), 1.0)
    if herm_err > 1e-10 * scale:
        raise ValueError(f"matrix is not Hermitian within tolerance ({herm_err:.2e})")
    sym = 0.5 * (mat + mat.conj().T)
    lam, vec = np.linalg.eigh(sym)
    return lam[::-1], vec[:, ::-1]


def least_squares(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares solution of a x = b.

    Pseudoinverse semantics with singular values below 1e-10 * sigma_max cut
    off, so rank-deficient and underdetermined systems are both fine.
    """
    x, *_ = np.linalg.lstsq(np.asarray(a), np.asarray(b), rcond=1e-10)
    return x
