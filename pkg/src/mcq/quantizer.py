"""Quantization channel: cell layout, observation generation, interval lookup.

Real and imaginary parts are quantized separately through the same scalar
quantizer. Cells are half-open [t_b, t_{b+1}) with t_0 = -inf and the last
upper edge +inf, so the cells tile the whole real line and out-of-range
values land in the edge cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import GaussInterval

__all__ = [
    "QuantizerSpec",
    "ObservedMatrix",
    "build_uniform_quantizer",
    "quantize_real",
    "bin_interval",
    "quantize_complex_matrix",
    "observe_unquantized",
]

_MAX_BITS = 16


@dataclass(frozen=True)
class QuantizerSpec:
    """Scalar quantizer: interior thresholds, codewords, and uniform step.

    thresholds holds the 2^B - 1 interior cell edges (strictly increasing);
    the implied outer edges are -inf and +inf. codewords holds one
    reconstruction level per cell. step is the uniform cell width (None for
    the one-bit sign quantizer, which has no uniform tiling).
    """

    bit_depth: int
    thresholds: np.ndarray
    codewords: np.ndarray
    step: float | None
    sigma_z: float

    def __post_init__(self):
        n_cells = 2 ** self.bit_depth
        if len(self.codewords) != n_cells:
            raise ValueError(f"need {n_cells} codewords, got {len(self.codewords)}")
        if len(self.thresholds) != n_cells - 1:
            raise ValueError(
                f"need {n_cells - 1} interior thresholds, got {len(self.thresholds)}")
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")

    @property
    def n_cells(self) -> int:
        return 2 ** self.bit_depth

    def edges(self) -> np.ndarray:
        """All cell edges including the infinite outer ones, length 2^B + 1."""
        return np.concatenate(([-np.inf], self.thresholds, [np.inf]))


def build_uniform_quantizer(bit_depth: int, sigma_z: float) -> QuantizerSpec:
    """Uniform quantizer covering the dynamic range [-3 sigma_z/sqrt(2), +3 sigma_z/sqrt(2)].

    The cell width is 3 sigma_z / 2^(B - 0.5) and codewords sit at cell
    centers (edge cells use the center of their finite-range part). For one
    bit the quantizer degenerates to a sign detector with zero threshold and
    codewords at +-sigma_z/sqrt(2), the per-component RMS.
    """
    if bit_depth < 1:
        raise ValueError("bit depth must be >= 1")
    if bit_depth > _MAX_BITS:
        raise ValueError(f"bit depth {bit_depth} > {_MAX_BITS} is not supported")
    if sigma_z <= 0:
        raise ValueError("sigma_z must be positive")
    if bit_depth == 1:
        level = sigma_z / np.sqrt(2.0)
        return QuantizerSpec(
            bit_depth=1,
            thresholds=np.array([0.0]),
            codewords=np.array([-level, level]),
            step=None,
            sigma_z=float(sigma_z),
        )
    n_cells = 2 ** bit_depth
    step = 3.0 * sigma_z / 2.0 ** (bit_depth - 0.5)
    half = n_cells // 2
    thresholds = (np.arange(1, n_cells) - half) * step
    codewords = (np.arange(n_cells) - half + 0.5) * step
    return QuantizerSpec(
        bit_depth=bit_depth,
        thresholds=thresholds,
        codewords=codewords,
        step=float(step),
        sigma_z=float(sigma_z),
    )


def quantize_real(a, spec: QuantizerSpec):
    """Bin index of a real value (or array): the b with a in [t_b, t_{b+1})."""
    idx = np.searchsorted(spec.thresholds, a, side="right")
    if np.isscalar(a) or np.ndim(a) == 0:
        return int(idx)
    return idx.astype(np.int64)


def bin_interval(b: int, spec: QuantizerSpec) -> GaussInterval:
    """The half-open cell [t_b, t_{b+1}) owned by bin b."""
    if not 0 <= b < spec.n_cells:
        raise ValueError(f"bin {b} out of range for a {spec.bit_depth}-bit quantizer")
    edges = spec.edges()
    return GaussInterval(lo=float(edges[b]), hi=float(edges[b + 1]))


@dataclass
class ObservedMatrix:
    """Partially observed matrix: index set plus per-entry observations.

    Quantized observations store the (re, im) bin index pair per entry;
    the unquantized variant (values is not None) stores the raw complex
    samples instead and leaves the bin arrays as None.
    """

    m: int
    n: int
    rows: np.ndarray
    cols: np.ndarray
    re_bins: np.ndarray | None = None
    im_bins: np.ndarray | None = None
    values: np.ndarray | None = None
    bit_depth: int | None = None
    sigma_z: float | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        if self.quantized == (self.values is not None):
            raise ValueError("provide exactly one of bin indices or raw values")
        if self.quantized:
            nc = 2 ** self.bit_depth if self.bit_depth else None
            for bins in (self.re_bins, self.im_bins):
                if len(bins) != self.n_obs:
                    raise ValueError("bin arrays must match the index set size")
                if nc is not None and (np.any(bins < 0) or np.any(bins >= nc)):
                    raise ValueError("bin index out of range")

    @property
    def quantized(self) -> bool:
        return self.re_bins is not None

    @property
    def n_obs(self) -> int:
        return len(self.rows)

    def codeword_values(self, spec: QuantizerSpec) -> np.ndarray:
        """Complex codewords per observed entry (dequantized representation)."""
        if not self.quantized:
            raise ValueError("raw-valued observations have no codewords")
        return spec.codewords[self.re_bins] + 1j * spec.codewords[self.im_bins]

    def to_json(self) -> str:
        if not self.quantized:
            raise ValueError("only quantized observations have a JSON form")
        entries = [
            [int(i), int(j), int(rb), int(ib)]
            for i, j, rb, ib in zip(self.rows, self.cols, self.re_bins, self.im_bins)
        ]
        return json.dumps({
            "m": self.m,
            "n": self.n,
            "B": self.bit_depth,
            "sigma_z": self.sigma_z,
            "entries": entries,
        })

    @classmethod
    def from_json(cls, text: str) -> "ObservedMatrix":
        doc = json.loads(text)
        entries = np.asarray(doc["entries"], dtype=np.int64).reshape(-1, 4)
        return cls(
            m=int(doc["m"]),
            n=int(doc["n"]),
            rows=entries[:, 0],
            cols=entries[:, 1],
            re_bins=entries[:, 2],
            im_bins=entries[:, 3],
            bit_depth=int(doc["B"]),
            sigma_z=float(doc["sigma_z"]),
        )


def quantize_complex_matrix(w: np.ndarray, rows, cols, spec: QuantizerSpec) -> ObservedMatrix:
    """Quantize Re/Im of the selected entries of a complex matrix separately."""
    w = np.asarray(w)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    samples = w[rows, cols]
    return ObservedMatrix(
        m=w.shape[0],
        n=w.shape[1],
        rows=rows,
        cols=cols,
        re_bins=quantize_real(samples.real, spec),
        im_bins=quantize_real(samples.imag, spec),
        bit_depth=spec.bit_depth,
        sigma_z=spec.sigma_z,
    )


def observe_unquantized(w: np.ndarray, rows, cols) -> ObservedMatrix:
    """Raw (infinite-resolution) observations of the selected entries."""
    w = np.asarray(w)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    return ObservedMatrix(
        m=w.shape[0], n=w.shape[1], rows=rows, cols=cols,
        values=w[rows, cols].astype(complex),
    )
