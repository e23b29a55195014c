"""Synthetic data generation, metrics, and the Monte-Carlo experiment runner.

A run sweeps (SNR, bit depth) over independent trials, solving each instance
with the EP solver, the VSBL-on-codewords baseline, and (for line-spectral
scenes) the MUSIC post-processing pipeline, and emits one metric row per
solver per trial. Everything is a pure function of (config, seed): trial
substreams derive from the master seed by a splitmix64 mix, and results are
merged in deterministic sweep order however the worker pool schedules them.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .grsbl import GrSblConfig, estimate_rank, run_mc_grsbl
from .lse2d import (LineSpectralScene, match_frequencies, run_lse2d,
                    wrap_angle)
from .quantizer import (ObservedMatrix, build_uniform_quantizer,
                        observe_unquantized, quantize_complex_matrix)
from .vsbl import HeteroObservations, vsbl_solve

__all__ = [
    "ExperimentConfig",
    "MetricRow",
    "CSV_HEADER",
    "derive_seed",
    "gen_random_lowrank",
    "gen_line_spectral",
    "sample_omega",
    "add_noise_and_quantize",
    "nmse",
    "debiased_nmse",
    "mse_freq",
    "run_experiment",
    "rows_to_csv",
    "summarize",
]

DB_FLOOR = -300.0

CSV_HEADER = ("scenario,m,n,r,k,p,snr_db,bits,trial,solver,nmse_db,"
              "debiased_nmse_db,rank_correct,mse_theta_db,mse_phi_db,"
              "iters,wall_ms")

SCENARIOS = ("random-lowrank", "lse2d")

_MIX = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + _MIX) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def derive_seed(seed: int, *indices: int) -> int:
    """Child seed from a master seed and substream indices (splitmix64 mix)."""
    x = seed & _MASK
    for idx in indices:
        x = _splitmix64(x ^ ((idx * _MIX) & _MASK))
    return x


@dataclass
class ExperimentConfig:
    """One experiment family: scenario, geometry, sweeps, and solver knobs.

    bits entries are ints, or math.inf for the unquantized channel. k
    defaults to twice the true rank, capped at min(m, n) / 2; the solvers
    never see the true rank itself.
    """

    scenario: str
    m: int
    n: int
    r: int
    p: float
    snr_db: list = field(default_factory=lambda: [10.0])
    bits: list = field(default_factory=lambda: [math.inf])
    trials: int = 1
    seed: int = 0
    k: int | None = None
    t_outer: int = 50
    damping: float = 0.7
    learn_noise: bool | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if not 0.0 < self.p <= 1.0:
            raise ValueError("sampling fraction p must lie in (0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        self.bits = [math.inf if b in (None, "inf", math.inf) else int(b)
                     for b in self.bits]
        if self.k is None:
            self.k = min(2 * self.r, max(min(self.m, self.n) // 2, 1))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class MetricRow:
    scenario: str
    m: int
    n: int
    r: int
    k: int
    p: float
    snr_db: float
    bits: float
    trial: int
    solver: str
    nmse_db: float | None = None
    debiased_nmse_db: float | None = None
    rank_correct: int | None = None
    mse_theta_db: float | None = None
    mse_phi_db: float | None = None
    iters: int | None = None
    wall_ms: float | None = None
    flag: str | None = None

    def csv_values(self):
        def fmt(x, nd=4):
            if x is None:
                return ""
            if isinstance(x, float):
                return f"{x:.{nd}f}"
            return str(x)
        bits = "inf" if math.isinf(self.bits) else str(int(self.bits))
        return [self.scenario, str(self.m), str(self.n), str(self.r),
                str(self.k), fmt(self.p, 3), fmt(float(self.snr_db), 2), bits,
                str(self.trial), self.solver, fmt(self.nmse_db),
                fmt(self.debiased_nmse_db),
                "" if self.rank_correct is None else str(self.rank_correct),
                fmt(self.mse_theta_db), fmt(self.mse_phi_db),
                "" if self.iters is None else str(self.iters),
                fmt(self.wall_ms, 1)]


def gen_random_lowrank(m: int, n: int, r: int, seed: int):
    """Rank-r matrix with i.i.d. standard complex Gaussian factors.

    Returns (Z, sigma_z^2) with the analytic per-entry variance sigma_z^2 = r.
    """
    if r > min(m, n):
        raise ValueError("rank exceeds the matrix dimensions")
    rng = np.random.default_rng(seed)
    u = (rng.standard_normal((m, r)) + 1j * rng.standard_normal((m, r))) / np.sqrt(2)
    v = (rng.standard_normal((n, r)) + 1j * rng.standard_normal((n, r))) / np.sqrt(2)
    return u @ v.conj().T, float(r)


def gen_line_spectral(m: int, n: int, r: int, seed: int,
                      min_sep: float | None = None):
    """Random 2D line-spectral scene with a pairwise frequency separation floor.

    Frequencies are uniform on [-pi, pi) rejected until all wrapped pairwise
    gaps reach min_sep (default two DFT bins of the larger aperture) in each
    coordinate. Magnitudes are real N(1, 0.2) resampled positive, phases
    uniform. Returns (Z, scene, sigma_z^2) with the nominal sigma_z^2 = r.
    """
    rng = np.random.default_rng(seed)
    if min_sep is None:
        min_sep = 2.0 * 2.0 * np.pi / max(m, n)
    if r > 1 and r * min_sep >= 2.0 * np.pi:
        raise ValueError("cannot fit r frequencies at this separation")

    def draw_freqs():
        for _ in range(10_000):
            f = rng.uniform(-np.pi, np.pi, r)
            if r == 1:
                return f
            gaps = np.abs(f[:, None] - f[None, :])
            gaps = np.minimum(gaps, 2.0 * np.pi - gaps)
            np.fill_diagonal(gaps, np.inf)
            if gaps.min() >= min_sep:
                return f
        raise RuntimeError("frequency separation rejection limit exceeded")

    theta = draw_freqs()
    phi = draw_freqs()
    mag = rng.normal(1.0, np.sqrt(0.2), r)
    for i in range(r):
        while mag[i] <= 0:
            mag[i] = rng.normal(1.0, np.sqrt(0.2))
    g = mag * np.exp(1j * rng.uniform(-np.pi, np.pi, r))
    scene = LineSpectralScene(theta=theta, phi=phi, g=g, r=r, m=m, n=n)
    return scene.matrix(), scene, float(r)


def sample_omega(m: int, n: int, p: float, seed: int):
    """Uniform subset of round(p m n) entries without replacement."""
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    count = int(round(p * m * n))
    flat = rng.choice(m * n, size=count, replace=False)
    flat.sort()
    return flat // n, flat % n


def add_noise_and_quantize(z: np.ndarray, sigma_z2: float, snr_db: float,
                           spec, rows, cols, seed: int) -> ObservedMatrix:
    """Observe z + CN(0, sigma^2) noise on the index set through the quantizer.

    sigma^2 = sigma_z^2 10^(-SNR/10); spec None means raw (unquantized)
    observations. An infinite SNR skips the noise draw entirely.
    """
    rng = np.random.default_rng(seed)
    m, n = z.shape
    if math.isinf(snr_db):
        w = z
    else:
        sigma2 = sigma_z2 * 10.0 ** (-snr_db / 10.0)
        noise = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n)))
        w = z + noise * np.sqrt(sigma2 / 2.0)
    if spec is None:
        return observe_unquantized(w, rows, cols)
    return quantize_complex_matrix(w, rows, cols, spec)


def nmse(z_hat: np.ndarray, z: np.ndarray) -> float:
    """Normalized error 20 log10(||Zhat - Z||_F / ||Z||_F), floored at -300 dB."""
    err = np.linalg.norm(z_hat - z)
    if err == 0.0:
        return DB_FLOOR
    return float(max(20.0 * np.log10(err / np.linalg.norm(z)), DB_FLOOR))


def debiased_nmse(z_hat: np.ndarray, z: np.ndarray) -> float:
    """NMSE after the optimal complex rescaling of the estimate.

    The minimizing scale is <Zhat, Z> / ||Zhat||_F^2 in the Frobenius inner
    product; one-bit data only pins the matrix up to scale, so this is the
    honest error there.
    """
    energy = np.vdot(z_hat, z_hat).real
    if energy == 0.0:
        return nmse(z_hat, z)
    c = np.vdot(z_hat, z) / energy
    return nmse(c * z_hat, z)


def mse_freq(est: np.ndarray, truth: np.ndarray, assignment) -> float:
    """10 log10 of the summed squared wrapped frequency errors under the assignment."""
    est_idx, true_idx = assignment
    err = wrap_angle(np.asarray(est)[est_idx] - np.asarray(truth)[true_idx])
    total = float(np.sum(err ** 2))
    if total == 0.0:
        return DB_FLOOR
    return float(max(10.0 * np.log10(total), DB_FLOOR))


def _solver_config(cfg: ExperimentConfig, bits, sigma2_true, seed):
    learn = cfg.learn_noise
    sigma2_init = None
    if bits == 1:
        # one-bit runs keep the noise variance fixed at its true value
        if learn is None:
            learn = False
        sigma2_init = sigma2_true
    return GrSblConfig(k=cfg.k, t_outer=cfg.t_outer, learn_noise=learn,
                       sigma2_init=sigma2_init, damping=cfg.damping,
                       seed=seed)


def _run_trial(cfg: ExperimentConfig, snr_db: float, bits, trial: int,
               timing: bool):
    """All solver rows for one (snr, bits, trial) cell."""
    trial_seed = derive_seed(cfg.seed, trial)
    scene = None
    if cfg.scenario == "lse2d":
        z, scene, sigma_z2 = gen_line_spectral(cfg.m, cfg.n, cfg.r,
                                               derive_seed(trial_seed, 1))
    else:
        z, sigma_z2 = gen_random_lowrank(cfg.m, cfg.n, cfg.r,
                                         derive_seed(trial_seed, 1))
    rows_idx, cols_idx = sample_omega(cfg.m, cfg.n, cfg.p,
                                      derive_seed(trial_seed, 2))
    sigma2_true = sigma_z2 * 10.0 ** (-snr_db / 10.0)
    quantized = not math.isinf(bits)
    spec = build_uniform_quantizer(int(bits), np.sqrt(sigma_z2)) if quantized else None
    obs = add_noise_and_quantize(z, sigma_z2, snr_db, spec, rows_idx, cols_idx,
                                 derive_seed(trial_seed, 3))
    solver_seed = derive_seed(trial_seed, 4) % (1 << 32)

    base = dict(scenario=cfg.scenario, m=cfg.m, n=cfg.n, r=cfg.r, k=cfg.k,
                p=cfg.p, snr_db=snr_db, bits=float(bits), trial=trial)
    out = []

    def clock():
        return time.perf_counter() if timing else 0.0

    # EP solver (and the MUSIC pipeline on line-spectral scenes)
    try:
        t0 = clock()
        gcfg = _solver_config(cfg, bits, sigma2_true, solver_seed)
        if cfg.scenario == "lse2d":
            res = run_lse2d(obs, spec, gcfg, z_true=z)
            sol = res.solver
            wall = (clock() - t0) * 1e3
            out.append(MetricRow(**base, solver="grsbl",
                                 nmse_db=nmse(sol.z_hat, z),
                                 debiased_nmse_db=debiased_nmse(sol.z_hat, z),
                                 rank_correct=int(sol.rank == cfg.r),
                                 iters=sol.iterations, wall_ms=wall))
            music_row = MetricRow(**base, solver="grsbl-music",
                                  nmse_db=nmse(res.z_hat, z),
                                  debiased_nmse_db=debiased_nmse(res.z_hat, z),
                                  rank_correct=int(res.scene.r == cfg.r),
                                  iters=sol.iterations, wall_ms=wall)
            if res.scene.r == cfg.r:
                assign = match_frequencies(res.scene.theta, res.scene.phi,
                                           scene.theta, scene.phi)
                music_row.mse_theta_db = mse_freq(res.scene.theta, scene.theta,
                                                  assign)
                music_row.mse_phi_db = mse_freq(res.scene.phi, scene.phi,
                                                assign)
            out.append(music_row)
        else:
            sol = run_mc_grsbl(obs, spec, gcfg, z_true=z)
            out.append(MetricRow(**base, solver="grsbl",
                                 nmse_db=nmse(sol.z_hat, z),
                                 debiased_nmse_db=debiased_nmse(sol.z_hat, z),
                                 rank_correct=int(sol.rank == cfg.r),
                                 iters=sol.iterations,
                                 wall_ms=(clock() - t0) * 1e3))
    except Exception as exc:  # noqa: BLE001 - a failed trial must not kill the run
        out.append(MetricRow(**base, solver="grsbl", flag=repr(exc)))
        if cfg.scenario == "lse2d":
            out.append(MetricRow(**base, solver="grsbl-music", flag=repr(exc)))

    # VSBL baseline on codewords (raw values when unquantized)
    try:
        t0 = clock()
        values = obs.codeword_values(spec) if quantized else obs.values
        hetero = HeteroObservations(m=cfg.m, n=cfg.n, rows=obs.rows,
                                    cols=obs.cols, values=values,
                                    precisions=np.full(obs.n_obs,
                                                       1.0 / sigma2_true))
        vres = vsbl_solve(hetero, k=cfg.k, max_iters=cfg.t_outer, tol=0.0,
                          seed=solver_seed)
        out.append(MetricRow(**base, solver="vsbl",
                             nmse_db=nmse(vres.z_hat, z),
                             debiased_nmse_db=debiased_nmse(vres.z_hat, z),
                             rank_correct=int(estimate_rank(vres.state.gamma)
                                              == cfg.r),
                             iters=vres.iterations,
                             wall_ms=(clock() - t0) * 1e3))
    except Exception as exc:  # noqa: BLE001
        out.append(MetricRow(**base, solver="vsbl", flag=repr(exc)))

    return out


def _run_trial_packed(args):
    return _run_trial(*args)


def run_experiment(cfg: ExperimentConfig, workers: int = 1,
                   timing: bool = True) -> list:
    """Sweep (snr, bits, trial) and return rows in deterministic order.

    workers > 1 fans trials out to a process pool; the result order is the
    same either way. timing=False zeroes the wall_ms column, making the
    output a pure function of the config (byte-identical CSVs across runs).
    """
    cells = [(cfg, snr, bits, trial, timing)
             for snr in cfg.snr_db
             for bits in cfg.bits
             for trial in range(cfg.trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_cell = list(pool.map(_run_trial_packed, cells))
    else:
        per_cell = [_run_trial(*cell) for cell in cells]
    return [row for rows in per_cell for row in rows]


def rows_to_csv(rows, file=None) -> str:
    """Write rows as CSV with the pinned header; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER.split(","))
    for row in rows:
        writer.writerow(row.csv_values())
    text = buf.getvalue()
    if file is not None:
        file.write(text)
    return text


def summarize(rows) -> dict:
    """Median metrics per (solver, snr_db, bits) cell, JSON-friendly."""
    groups: dict = {}
    for row in rows:
        if row.flag is not None or row.nmse_db is None:
            continue
        key = (row.solver, float(row.snr_db), float(row.bits))
        groups.setdefault(key, []).append(row)
    out = []
    for (solver, snr, bits), members in sorted(groups.items()):
        entry = {
            "solver": solver,
            "snr_db": snr,
            "bits": "inf" if math.isinf(bits) else int(bits),
            "trials": len(members),
            "median_nmse_db": float(np.median([r.nmse_db for r in members])),
            "median_debiased_nmse_db": float(
                np.median([r.debiased_nmse_db for r in members])),
            "rank_correct_rate": float(
                np.mean([r.rank_correct for r in members])),
        }
        thetas = [r.mse_theta_db for r in members if r.mse_theta_db is not None]
        if thetas:
            entry["median_mse_theta_db"] = float(np.median(thetas))
            entry["median_mse_phi_db"] = float(
                np.median([r.mse_phi_db for r in members
                           if r.mse_phi_db is not None]))
        out.append(entry)
    return {"cells": out}
