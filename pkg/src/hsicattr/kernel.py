"""Gram matrices for masks and model outputs.

Input side: the Dirac kernel centred under Bernoulli(1/2),
``k0(x, x') = [x == x'] - 1/2``, and the ANOVA product kernel
``prod_i (1 + k0(x_i, x'_i))`` over a patch subset.

Output side: Gaussian RBF ``exp(-|y - y'|^2 / (2 sigma^2))`` with a fixed or
median-heuristic bandwidth, plus a linear kernel ``<y, y'>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.spatial.distance import pdist

RBF = "rbf"
LINEAR = "linear"

MEDIAN_PAIRWISE = "pairwise"
MEDIAN_VALUES = "values"

# entries of one output-Gram row block
_BLOCK_ENTRIES = 1 << 23


@dataclass(frozen=True)
class OutputKernel:
    """Output kernel choice.

    ``bandwidth=None`` selects the median heuristic; ``median_mode`` picks
    between the median pairwise distance (default) and the median output
    magnitude.
    """

    kind: str = RBF
    bandwidth: Optional[float] = None
    median_mode: str = MEDIAN_PAIRWISE

    def __post_init__(self):
        if self.kind not in (RBF, LINEAR):
            raise ValueError(f"unknown output kernel {self.kind!r}")
        if self.bandwidth is not None and not float(self.bandwidth) > 0:
            raise ValueError(f"RBF bandwidth must be > 0, got {self.bandwidth}")
        if self.median_mode not in (MEDIAN_PAIRWISE, MEDIAN_VALUES):
            raise ValueError(f"unknown median mode {self.median_mode!r}")

    @classmethod
    def parse(cls, text: str) -> "OutputKernel":
        """Parse ``rbf:median``, ``rbf:median-values``, ``rbf:<sigma>`` or ``linear``."""
        text = text.strip().lower()
        if text == LINEAR:
            return cls(LINEAR)
        kind, _, arg = text.partition(":")
        if kind != RBF:
            raise ValueError(f"unknown output kernel {text!r}")
        if arg in ("", "median"):
            return cls(RBF)
        if arg == "median-values":
            return cls(RBF, median_mode=MEDIAN_VALUES)
        try:
            sigma = float(arg)
        except ValueError:
            raise ValueError(f"bad RBF bandwidth {arg!r}") from None
        return cls(RBF, bandwidth=sigma)

    def __str__(self) -> str:
        if self.kind == LINEAR:
            return LINEAR
        if self.bandwidth is not None:
            return f"rbf:{float(self.bandwidth)!r}"
        return "rbf:median" if self.median_mode == MEDIAN_PAIRWISE else "rbf:median-values"


def as_outputs(outputs) -> np.ndarray:
    """Coerce outputs to a float64 ``(p, n)`` array."""
    y = np.asarray(outputs, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if y.ndim != 2:
        raise ValueError(f"outputs must be 1-D or 2-D, got shape {y.shape}")
    return y


def _as_binary(column) -> np.ndarray:
    m = np.asarray(column)
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask entries must be 0 or 1")
    return m.astype(np.int8)


def signs(masks) -> np.ndarray:
    """Map 0/1 masks to -1/+1 floats, so ``k0(a, b) = s_a * s_b / 2``."""
    return 2.0 * _as_binary(masks).astype(np.float64) - 1.0


def gram_dirac_centered(column) -> np.ndarray:
    m = _as_binary(column).reshape(-1)
    return np.where(m[:, None] == m[None, :], 0.5, -0.5)


def gram_anova_subset(columns) -> np.ndarray:
    m = _as_binary(columns)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[1] == 0:
        raise ValueError("ANOVA kernel needs a non-empty patch subset")
    gram = np.ones((m.shape[0], m.shape[0]))
    for i in range(m.shape[1]):
        gram *= 1.0 + gram_dirac_centered(m[:, i])
    return gram


def median_bandwidth(outputs, mode: str = MEDIAN_PAIRWISE) -> Optional[float]:
    """Median heuristic bandwidth, or ``None`` when the outputs have zero spread.

    The default is the median Euclidean distance over all ``p(p-1)/2`` output
    pairs. ``mode="values"`` uses the median output magnitude instead.
    """
    y = as_outputs(outputs)
    if y.shape[0] < 2:
        raise ValueError("median bandwidth needs at least 2 outputs")
    if mode == MEDIAN_PAIRWISE:
        dist = pdist(y)
        sigma = float(np.median(dist, overwrite_input=True))
    elif mode == MEDIAN_VALUES:
        if np.all(y == y[0]):
            return None
        sigma = float(np.median(np.linalg.norm(y, axis=1)))
    else:
        raise ValueError(f"unknown median mode {mode!r}")
    if not sigma > 0:
        return None
    return sigma


def _sq_dists(ya: np.ndarray, yb: np.ndarray) -> np.ndarray:
    # sum of squared differences in a fixed order; symmetric bit-for-bit
    out = np.zeros((ya.shape[0], yb.shape[0]))
    for k in range(ya.shape[1]):
        diff = ya[:, k, None] - yb[None, :, k]
        out += diff * diff
    return out


def _linear(ya: np.ndarray, yb: np.ndarray) -> np.ndarray:
    out = np.zeros((ya.shape[0], yb.shape[0]))
    for k in range(ya.shape[1]):
        out += ya[:, k, None] * yb[None, :, k]
    return out


def gram_rbf(outputs, bandwidth: float) -> np.ndarray:
    if not float(bandwidth) > 0:
        raise ValueError(f"RBF bandwidth must be > 0, got {bandwidth}")
    y = as_outputs(outputs)
    return np.exp(_sq_dists(y, y) / (-2.0 * float(bandwidth) ** 2))


def gram_linear(outputs) -> np.ndarray:
    y = as_outputs(outputs)
    return _linear(y, y)


def resolve_bandwidth(outputs, spec: OutputKernel) -> Optional[float]:
    """Bandwidth actually used for ``outputs``; ``None`` signals zero spread."""
    y = as_outputs(outputs)
    if spec.kind == LINEAR:
        return None if np.all(y == y[0]) else 1.0
    if spec.bandwidth is not None:
        return float(spec.bandwidth)
    return median_bandwidth(y, spec.median_mode)


def gram_output(outputs, spec: OutputKernel, bandwidth: float) -> np.ndarray:
    if spec.kind == LINEAR:
        return gram_linear(outputs)
    return gram_rbf(outputs, bandwidth)


def gram_output_blocks(
    outputs, spec: OutputKernel, bandwidth: float, block_entries: int = _BLOCK_ENTRIES
) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(start, stop, L[start:stop])`` row blocks of the output Gram matrix.

    Keeps memory at O(block * p) for large sample counts.
    """
    y = as_outputs(outputs)
    p = y.shape[0]
    rows = max(1, block_entries // p)
    for start in range(0, p, rows):
        stop = min(p, start + rows)
        if spec.kind == LINEAR:
            yield start, stop, _linear(y[start:stop], y)
        else:
            yield start, stop, np.exp(_sq_dists(y[start:stop], y) / (-2.0 * bandwidth**2))


def centering_matrix(p: int) -> np.ndarray:
    if int(p) < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return np.eye(p) - np.full((p, p), 1.0 / p)
