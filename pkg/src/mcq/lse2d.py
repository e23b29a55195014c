"""2D line spectral estimation on top of the quantized matrix-completion solver.

A scene of r complex exponentials makes Z = A_m(theta) diag(g) A_n(phi)^H a
rank-r matrix, so the EP solver recovers factor estimates whose column span
approximates the steering span. MUSIC on each factor Gram yields the two
frequency sets independently; least squares recovers the per-component
powers; the residual r x r unitary ambiguity between the factors is
estimated explicitly and binarized into a generalized permutation matrix,
which simultaneously pairs theta with phi, fixes the phase square-root sign,
and orders the amplitudes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .grsbl import GrSblConfig, GrSblResult, estimate_rank, run_mc_grsbl
from .numerics import hermitian_eig, least_squares
from .quantizer import ObservedMatrix, QuantizerSpec

__all__ = [
    "LineSpectralScene",
    "PairingResult",
    "Lse2dResult",
    "steering",
    "steering_matrix",
    "music_1d",
    "ls_powers",
    "estimate_unitary",
    "resolve_pairing",
    "match_frequencies",
    "wrap_angle",
    "run_lse2d",
]

MUSIC_GRID = 2 ** 14
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def wrap_angle(x):
    """Wrap angles into [-pi, pi)."""
    return np.mod(np.asarray(x) + np.pi, 2.0 * np.pi) - np.pi


@dataclass
class LineSpectralScene:
    """Ground truth (or estimate) of a 2D line spectral scene."""

    theta: np.ndarray
    phi: np.ndarray
    g: np.ndarray
    r: int
    m: int
    n: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.g = np.asarray(self.g, dtype=complex)
        if not (len(self.theta) == len(self.phi) == len(self.g) == self.r):
            raise ValueError("scene arrays must have length r")
        if self.r > min(self.m, self.n):
            raise ValueError("model order exceeds the aperture")

    def matrix(self) -> np.ndarray:
        return (steering_matrix(self.m, self.theta)
                @ np.diag(self.g)
                @ steering_matrix(self.n, self.phi).conj().T)

    def to_json(self) -> str:
        return json.dumps({
            "theta": self.theta.tolist(),
            "phi": self.phi.tolist(),
            "g_re": self.g.real.tolist(),
            "g_im": self.g.imag.tolist(),
            "r": int(self.r),
        })

    @classmethod
    def from_json(cls, text: str, m: int = 0, n: int = 0) -> "LineSpectralScene":
        doc = json.loads(text)
        g = np.asarray(doc["g_re"], dtype=float) + 1j * np.asarray(doc["g_im"], dtype=float)
        r = int(doc["r"])
        m = m or r
        n = n or r
        return cls(theta=np.asarray(doc["theta"]), phi=np.asarray(doc["phi"]),
                   g=g, r=r, m=m, n=n)


@dataclass
class PairingResult:
    """Correspondence between the two frequency sets plus sign/phase resolution.

    permutation[i] is the phi/h component paired with theta component i.
    signs and phases are indexed by phi component; j_pi is the binarized
    generalized permutation matrix (rows: phi components, cols: theta
    components) with entries in {-1, 0, +1}.
    """

    permutation: np.ndarray
    signs: np.ndarray
    phases: np.ndarray
    j_pi: np.ndarray


def steering(m: int, theta: float) -> np.ndarray:
    """Steering vector [1, e^{j theta}, ..., e^{j (m-1) theta}]."""
    return np.exp(1j * np.arange(m) * theta)


def steering_matrix(m: int, freqs) -> np.ndarray:
    return np.exp(1j * np.outer(np.arange(m), np.asarray(freqs)))


def _noise_cost(en_h, m, omega):
    a = np.exp(1j * np.arange(m) * omega)
    return float(np.sum(np.abs(en_h @ a) ** 2))


def _golden_refine(fun, lo, hi, iters=70):
    """Golden-section minimization on [lo, hi]; ~1e-15 bracket shrink at 70 iters."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def music_1d(factor: np.ndarray, r_hat: int, grid_size: int = MUSIC_GRID) -> np.ndarray:
    """Frequencies of the r_hat strongest pseudospectrum peaks of one factor.

    Forms the Gram G = F F^H, splits off the (m - r_hat)-dimensional noise
    subspace, scans 1/||E_n^H a(w)||^2 on a uniform grid over [-pi, pi), and
    refines each retained peak by golden-section search inside its grid
    neighborhood. Fewer than r_hat local maxima means a degraded estimate:
    the returned array is simply shorter.
    """
    factor = np.asarray(factor)
    m = factor.shape[0]
    if r_hat >= m:
        raise ValueError("model order must be below the aperture for MUSIC")
    if r_hat < 1:
        return np.empty(0)
    gram = factor @ factor.conj().T
    _, vecs = hermitian_eig(gram)
    en_h = vecs[:, r_hat:].conj().T
    omegas = np.linspace(-np.pi, np.pi, grid_size, endpoint=False)
    a_all = np.exp(1j * np.outer(np.arange(m), omegas))
    cost = np.sum(np.abs(en_h @ a_all) ** 2, axis=0)
    # local minima of the noise projection, with wraparound
    is_min = (cost < np.roll(cost, 1)) & (cost <= np.roll(cost, -1))
    idx = np.flatnonzero(is_min)
    idx = idx[np.argsort(cost[idx])][:r_hat]
    step = 2.0 * np.pi / grid_size
    found = [
        _golden_refine(lambda w: _noise_cost(en_h, m, w),
                       omegas[i] - step, omegas[i] + step)
        for i in idx
    ]
    return wrap_angle(np.asarray(found))


def ls_powers(factor: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Per-component powers solving vec(F F^H) ~ sum_i p_i conj(a_i) (x) a_i.

    Real parts of the LS solution floored at zero. Nearly collinear steering
    columns (close frequencies) trip the pseudoinverse cutoff; a warning is
    emitted so callers can treat the powers as suspect.
    """
    factor = np.asarray(factor)
    m = factor.shape[0]
    freqs = np.asarray(freqs, dtype=float)
    gram_vec = (factor @ factor.conj().T).flatten(order="F")
    cols = np.stack([np.kron(steering(m, w).conj(), steering(m, w))
                     for w in freqs], axis=1)
    if len(freqs) > 1:
        sv = np.linalg.svd(cols, compute_uv=False)
        if sv[-1] < 1e-8 * sv[0]:
            warnings.warn("nearly collinear steering columns; powers are ill"
                          " conditioned", RuntimeWarning, stacklevel=2)
    sol = least_squares(cols, gram_vec)
    return np.maximum(sol.real, 0.0)


def estimate_unitary(u_factor: np.ndarray, theta: np.ndarray,
                     f: np.ndarray) -> np.ndarray:
    """Residual rotation between the factor and its steering parameterization.

    Solves U ~ A_m(theta) diag(f) Gamma for Gamma by pseudoinverse. Close to
    exact factors the result is unitary up to estimation error.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("component amplitudes must be positive")
    basis = steering_matrix(u_factor.shape[0], theta) @ np.diag(f)
    sv = np.linalg.svd(basis, compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        warnings.warn("rank-deficient steering matrix (coincident frequencies)",
                      RuntimeWarning, stacklevel=2)
    return np.linalg.pinv(basis, rcond=1e-10) @ u_factor


def resolve_pairing(v_factor: np.ndarray, unitary: np.ndarray,
                    phi: np.ndarray, h_abs: np.ndarray) -> PairingResult:
    """Recover the theta/phi correspondence, phase, and sign ambiguities.

    Three LS stages: (a) the doubled phases e^{j 2 angle(h)} from the
    rotation-free Gram V Gamma^H Gamma^* V^T, (b) principal square roots,
    (c) the generalized permutation matrix from V Gamma^H against the
    steering parameterization, binarized greedily: take the largest-magnitude
    entry, fix its sign to the nearer of +-1, strike its row and column,
    repeat. Ties resolve to the lowest row index and +1.
    """
    v_factor = np.asarray(v_factor)
    n = v_factor.shape[0]
    phi = np.asarray(phi, dtype=float)
    h_abs = np.asarray(h_abs, dtype=float)
    r = len(phi)
    if len(h_abs) != r:
        raise ValueError("phi and h_abs must have the same length")

    rot_free = v_factor @ unitary.conj().T @ unitary.conj() @ v_factor.T
    cols = np.stack([
        h_abs[i] ** 2 * np.kron(steering(n, phi[i]), steering(n, phi[i]))
        for i in range(r)
    ], axis=1)
    doubled = least_squares(cols, rot_free.flatten(order="F"))
    mags = np.abs(doubled)
    doubled = np.where(mags > 0, doubled / np.where(mags > 0, mags, 1.0), 1.0)
    roots = np.exp(0.5j * np.angle(doubled))

    target = v_factor @ unitary.conj().T
    basis = steering_matrix(n, phi) @ np.diag(h_abs) @ np.diag(roots)
    j_ls = np.linalg.pinv(basis, rcond=1e-10) @ target

    work = np.abs(j_ls).copy()
    j_pi = np.zeros((r, r))
    permutation = np.zeros(r, dtype=int)
    signs = np.zeros(r)
    for _ in range(r):
        flat = int(np.argmax(work))  # argmax breaks ties at the lowest index
        row, col = divmod(flat, r)
        entry = j_ls[row, col]
        sign = 1.0 if abs(entry - 1.0) <= abs(entry + 1.0) else -1.0
        j_pi[row, col] = sign
        permutation[col] = row
        signs[col] = sign
        work[row, :] = -np.inf
        work[:, col] = -np.inf

    phases = np.angle(roots).astype(float)
    flip = np.zeros(r, dtype=bool)
    flip[permutation] = signs < 0
    phases = np.where(flip, wrap_angle(phases + np.pi), phases)
    sign_by_row = np.ones(r)
    sign_by_row[permutation] = signs
    return PairingResult(permutation=permutation, signs=sign_by_row,
                         phases=phases, j_pi=j_pi)


def match_frequencies(est_theta, est_phi, true_theta, true_phi):
    """Minimum-cost assignment of estimated to true components.

    Cost is the wrapped |dtheta| + |dphi| per pair. Returns (est_idx,
    true_idx) index arrays.
    """
    est_theta = np.asarray(est_theta)
    est_phi = np.asarray(est_phi)
    cost = (np.abs(wrap_angle(est_theta[:, None] - np.asarray(true_theta)[None, :]))
            + np.abs(wrap_angle(est_phi[:, None] - np.asarray(true_phi)[None, :])))
    return linear_sum_assignment(cost)


@dataclass
class Lse2dResult:
    scene: LineSpectralScene
    z_hat: np.ndarray
    solver: GrSblResult

    def to_json(self) -> str:
        return self.scene.to_json()


def run_lse2d(obs: ObservedMatrix, spec: QuantizerSpec | None,
              cfg: GrSblConfig, z_true: np.ndarray | None = None) -> Lse2dResult:
    """Complete pipeline: EP solve, factor pruning, MUSIC, pairing, rebuild.

    The factors are pruned to the estimated rank (columns of smallest
    precision) before MUSIC, the two frequency sets are estimated
    independently, and the pairing stage reorders phi, the amplitudes, and
    the phases onto the theta ordering. An estimated rank of zero yields an
    empty scene with a zero reconstruction.
    """
    solver = run_mc_grsbl(obs, spec, cfg, z_true=z_true)
    m, n = obs.m, obs.n
    r_hat = int(solver.rank)
    if r_hat == 0:
        scene = LineSpectralScene(theta=np.empty(0), phi=np.empty(0),
                                  g=np.empty(0, complex), r=0, m=m, n=n)
        return Lse2dResult(scene=scene, z_hat=np.zeros((m, n), complex),
                           solver=solver)
    keep = np.argsort(solver.gamma)[:r_hat]
    u_kept = solver.state.u_mean[:, keep]
    v_kept = solver.state.v_mean[:, keep]

    theta = music_1d(u_kept, r_hat)
    phi = music_1d(v_kept, r_hat)
    r_eff = min(len(theta), len(phi))
    theta, phi = theta[:r_eff], phi[:r_eff]
    if r_eff == 0:
        scene = LineSpectralScene(theta=np.empty(0), phi=np.empty(0),
                                  g=np.empty(0, complex), r=0, m=m, n=n)
        return Lse2dResult(scene=scene, z_hat=np.zeros((m, n), complex),
                           solver=solver)

    f_amp = np.sqrt(np.maximum(ls_powers(u_kept, theta), 1e-24))
    h_amp = np.sqrt(np.maximum(ls_powers(v_kept, phi), 1e-24))
    unitary = estimate_unitary(u_kept, theta, f_amp)
    pairing = resolve_pairing(v_kept, unitary, phi, h_amp)

    order = pairing.permutation
    phi_paired = phi[order]
    g = f_amp * h_amp[order] * np.exp(-1j * pairing.phases[order])
    scene = LineSpectralScene(theta=theta, phi=phi_paired, g=g,
                              r=r_eff, m=m, n=n)
    return Lse2dResult(scene=scene, z_hat=scene.matrix(), solver=solver)
