"""Variational sparse Bayesian matrix completion under known heteroscedastic noise.

The model is Y_ij = u_i. v_j.^H + noise with per-entry noise precision
beta_ij, column-wise Gaussian priors of shared precision gamma_i on both
factors (the ARD construction that prunes unused columns), and a mean-field
posterior that factorizes over the rows of U and V. One sweep updates every
U row, then every V row, then the precisions via their EM stationary point.

Run standalone on (de)quantized codewords this is the VSBL baseline; driven
with per-entry pseudo-observations it is module A of the EP solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HeteroObservations",
    "FactorState",
    "VsblResult",
    "init_factor_state",
    "update_rows_u",
    "update_rows_v",
    "update_gamma",
    "vb_sweep",
    "posterior_moments_Z",
    "vsbl_solve",
]

GAMMA_MAX = 1e12


@dataclass
class HeteroObservations:
    """Observed entries with per-entry complex value and noise precision."""

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    precisions: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=complex)
        self.precisions = np.asarray(self.precisions, dtype=float)
        if not (len(self.rows) == len(self.cols) == len(self.values)
                == len(self.precisions)):
            raise ValueError("entry arrays must share one length")
        if np.any(self.precisions <= 0):
            raise ValueError("noise precisions must be positive")

    def dense(self):
        """(weighted value, precision) dense m x n views, zero off the index set."""
        by = np.zeros((self.m, self.n), dtype=complex)
        bp = np.zeros((self.m, self.n), dtype=float)
        by[self.rows, self.cols] = self.precisions * self.values
        bp[self.rows, self.cols] = self.precisions
        return by, bp


@dataclass
class FactorState:
    """Posterior state of the factor model: row means, row covariances, precisions.

    u_mean is m x k (rows are the 1 x k row vectors u_i.), u_cov stacks the m
    Hermitian k x k row covariances; likewise for v. gamma holds the k ARD
    precisions.
    """

    u_mean: np.ndarray
    u_cov: np.ndarray
    v_mean: np.ndarray
    v_cov: np.ndarray
    gamma: np.ndarray

    @property
    def m(self) -> int:
        return self.u_mean.shape[0]

    @property
    def n(self) -> int:
        return self.v_mean.shape[0]

    @property
    def k(self) -> int:
        return self.u_mean.shape[1]

    def copy(self) -> "FactorState":
        return FactorState(self.u_mean.copy(), self.u_cov.copy(),
                           self.v_mean.copy(), self.v_cov.copy(),
                           self.gamma.copy())

    def to_json(self) -> str:
        def pack(z):
            return {"re": z.real.tolist(), "im": z.imag.tolist()}
        return json.dumps({
            "u_mean": pack(self.u_mean), "u_cov": pack(self.u_cov),
            "v_mean": pack(self.v_mean), "v_cov": pack(self.v_cov),
            "gamma": self.gamma.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "FactorState":
        doc = json.loads(text)

        def unpack(d):
            return np.asarray(d["re"]) + 1j * np.asarray(d["im"])
        return cls(unpack(doc["u_mean"]), unpack(doc["u_cov"]),
                   unpack(doc["v_mean"]), unpack(doc["v_cov"]),
                   np.asarray(doc["gamma"], dtype=float))


def init_factor_state(m: int, n: int, k: int, rng: np.random.Generator) -> FactorState:
    """Symmetric cold start: scaled complex-Gaussian means, identity covariances.

    The all-zero mean is a degenerate fixed point of the sweeps, so the means
    must start random; 1/sqrt(k) scaling gives unit prior-predictive energy.
    """
    scale = 1.0 / np.sqrt(2.0 * k)
    u = (rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))) * scale
    v = (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))) * scale
    eye = np.eye(k, dtype=complex)
    return FactorState(
        u_mean=u,
        u_cov=np.tile(eye, (m, 1, 1)),
        v_mean=v,
        v_cov=np.tile(eye, (n, 1, 1)),
        gamma=np.ones(k),
    )


def _row_update(weighted_y, prec, other_mean, other_cov, gamma):
    """Shared row update: returns (means, covariances) for one factor's rows.

    weighted_y and prec are dense (rows_of_this_factor x other_dim) arrays of
    beta * y and beta; the normal equations per row are
    cov = (sum_j beta_j E[x_j^H x_j] + diag(gamma))^-1 and
    mean = (sum_j beta_j y_j x_j) cov  (row-vector convention).
    """
    second_moment = (other_mean[:, :, None].conj() * other_mean[:, None, :]
                     + other_cov)
    a = np.einsum("ij,jkl->ikl", prec, second_moment)
    a += np.diag(gamma)[None, :, :]
    cov = np.linalg.inv(a)
    cov = 0.5 * (cov + np.conj(np.swapaxes(cov, 1, 2)))
    rhs = weighted_y @ other_mean
    mean = np.einsum("ik,ikl->il", rhs, cov)
    return mean, cov


def update_rows_u(state: FactorState, obs: HeteroObservations):
    """Posterior update of all U rows given the current V posterior."""
    by, bp = obs.dense()
    return _row_update(by, bp, state.v_mean, state.v_cov, state.gamma)


def update_rows_v(state: FactorState, obs: HeteroObservations):
    """Posterior update of all V rows; mirrors the U update with conjugated data."""
    by, bp = obs.dense()
    return _row_update(by.conj().T, bp.T, state.u_mean, state.u_cov, state.gamma)


def update_gamma(state: FactorState) -> np.ndarray:
    """EM stationary point of the ARD precisions.

    gamma_i = (m + n) / (E||u_.i||^2 + E||v_.i||^2); the expectation adds the
    covariance diagonals to the squared means. Clamped at GAMMA_MAX so a fully
    pruned column cannot overflow later inversions.
    """
    energy = (np.sum(np.abs(state.u_mean) ** 2, axis=0)
              + np.einsum("ikk->k", state.u_cov).real
              + np.sum(np.abs(state.v_mean) ** 2, axis=0)
              + np.einsum("jkk->k", state.v_cov).real)
    with np.errstate(divide="ignore", over="ignore"):
        gamma = (state.m + state.n) / energy
    return np.minimum(np.where(np.isfinite(gamma), gamma, GAMMA_MAX), GAMMA_MAX)


def vb_sweep(state: FactorState, obs: HeteroObservations) -> FactorState:
    """One full variational sweep: U rows, V rows, then precisions."""
    u_mean, u_cov = update_rows_u(state, obs)
    state = FactorState(u_mean, u_cov, state.v_mean, state.v_cov, state.gamma)
    v_mean, v_cov = update_rows_v(state, obs)
    state = FactorState(u_mean, u_cov, v_mean, v_cov, state.gamma)
    return FactorState(u_mean, u_cov, v_mean, v_cov, update_gamma(state))


def posterior_moments_Z(state: FactorState):
    """Posterior mean and variance of every entry of Z = U V^H.

    The variance combines both factors' row covariances plus their product
    term: v_j. Su_i v_j.^H + u_i. Sv_j u_i.^H + tr(Su_i Sv_j), which is the
    exact second moment of a product of independent Gaussian rows.
    """
    z = state.u_mean @ state.v_mean.conj().T
    quad_u = np.einsum("jk,ikl,jl->ij", state.v_mean, state.u_cov,
                       state.v_mean.conj(), optimize=True).real
    quad_v = np.einsum("ik,jkl,il->ij", state.u_mean, state.v_cov,
                       state.u_mean.conj(), optimize=True).real
    cross = np.einsum("ikl,jlk->ij", state.u_cov, state.v_cov,
                      optimize=True).real
    var = quad_u + quad_v + cross
    return z, np.maximum(var, 0.0)


@dataclass
class VsblResult:
    state: FactorState
    iterations: int
    converged: bool

    @property
    def z_hat(self) -> np.ndarray:
        return self.state.u_mean @ self.state.v_mean.conj().T


def vsbl_solve(obs: HeteroObservations, k: int, max_iters: int = 200,
               tol: float = 1e-4, seed: int = 0,
               init_state: FactorState | None = None) -> VsblResult:
    """Iterate VB sweeps until the relative change of U V^H drops below tol.

    Non-convergence within max_iters returns the last state with
    converged=False rather than raising.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    state = init_state if init_state is not None else init_factor_state(
        obs.m, obs.n, k, np.random.default_rng(seed))
    z_prev = state.u_mean @ state.v_mean.conj().T
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        state = vb_sweep(state, obs)
        z = state.u_mean @ state.v_mean.conj().T
        denom = max(np.linalg.norm(z), 1e-30)
        if np.linalg.norm(z - z_prev) <= tol * denom:
            converged = True
            break
        z_prev = z
    return VsblResult(state=state, iterations=it, converged=converged)
