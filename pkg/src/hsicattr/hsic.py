"""HSIC estimator, per-patch attribution scores and pairwise interactions.

The estimator is the biased V-statistic ``tr(K H L H) / (p - 1)**2`` with
``H = I - 1/p``. For a single patch the Dirac-centred Gram matrix is the rank
one matrix ``s s^T / 2`` with ``s = 2 m - 1``, so its score reduces to the
quadratic form ``(H s)^T L (H s) / 2``. Pair interactions reduce the same
way with ``t = s_i * s_j`` and a factor 1/4. All d scores and all d(d-1)/2
interactions thus share one output Gram matrix.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np

from .design import MaskDesign
from .kernel import (
    OutputKernel,
    as_outputs,
    gram_anova_subset,
    gram_output,
    gram_output_blocks,
    resolve_bandwidth,
    signs,
)

ZERO_SPREAD_WARNING = "zero-spread: outputs are constant, all scores set to 0"

# pair columns handled per output-Gram sweep
_PAIR_CHUNK = 256


def hsic_estimate(K, L) -> float:
    """``tr(K H L H) / (p - 1)**2`` via the Frobenius product of ``H K H`` and ``L``."""
    K = np.asarray(K, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape != L.shape:
        raise ValueError(f"K and L must be square with equal shapes, got {K.shape} and {L.shape}")
    p = K.shape[0]
    if p < 2:
        raise ValueError("HSIC estimate needs p >= 2")
    Kc = K - K.mean(axis=0, keepdims=True)
    Kc = Kc - Kc.mean(axis=1, keepdims=True)
    return float(np.sum(Kc * L) / (p - 1) ** 2)


@dataclass
class AttributionResult:
    scores: np.ndarray
    grid: tuple
    config: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "grid": [int(self.grid[0]), int(self.grid[1])],
            "scores": [float(v) for v in self.scores],
            "config": self.config,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AttributionResult":
        try:
            grid = tuple(int(v) for v in obj["grid"])
            scores = np.asarray(obj["scores"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed scores artifact: {exc}") from exc
        if len(grid) != 2 or scores.shape != (grid[0] * grid[1],):
            raise ValueError("scores length does not match grid")
        return cls(scores, grid, obj.get("config", {}), list(obj.get("warnings", [])))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "col", "row", "score"])
        width = int(self.grid[0])
        for idx, value in enumerate(self.scores):
            writer.writerow([idx, idx % width, idx // width, repr(float(value))])
        return buf.getvalue()


@dataclass
class InteractionMatrix:
    entries: np.ndarray
    grid: tuple = (0, 0)
    warnings: list = field(default_factory=list)
    evaluated: int = 0

    def pairs(self) -> list[tuple[int, int, float]]:
        d = self.entries.shape[0]
        return [(i, j, float(self.entries[i, j])) for i, j in combinations(range(d), 2)]

    def top(self, k: Optional[int] = None, threshold: Optional[float] = None):
        """Pairs sorted by decreasing value, ties broken by ``(i, j)``."""
        ranked = sorted(self.pairs(), key=lambda t: (-t[2], t[0], t[1]))
        if threshold is not None:
            ranked = [t for t in ranked if t[2] > threshold]
        return ranked if k is None else ranked[:k]

    def to_dict(self, top_k: Optional[int] = None, threshold: Optional[float] = None) -> dict:
        return {
            "grid": [int(self.grid[0]), int(self.grid[1])],
            "matrix": [[float(v) for v in row] for row in self.entries],
            "top": [[i, j, v] for i, j, v in self.top(top_k, threshold)],
            "warnings": list(self.warnings),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["i", "j", "value"])
        for i, j, v in self.pairs():
            writer.writerow([i, j, repr(v)])
        return buf.getvalue()


class HSICAnalysis:
    """Shared state for scoring one design against one set of outputs.

    The output bandwidth, the output Gram matrix and the centred sign
    columns are computed once and reused by every patch, subset and pair.
    """

    def __init__(self, design: MaskDesign | np.ndarray, outputs, kernel: OutputKernel = OutputKernel()):
        masks = design.masks if isinstance(design, MaskDesign) else np.asarray(design)
        if masks.ndim != 2:
            raise ValueError("masks must be a (p, d) matrix")
        y = as_outputs(outputs)
        if y.shape[0] != masks.shape[0]:
            raise ValueError(f"got {y.shape[0]} outputs for {masks.shape[0]} masks")
        if masks.shape[0] < 2:
            raise ValueError("HSIC needs p >= 2 samples")
        if not np.all(np.isfinite(y)):
            raise ValueError("outputs contain NaN or Inf")
        self.masks = masks
        self.outputs = y
        self.kernel = kernel
        self.p, self.d = masks.shape
        self.bandwidth = resolve_bandwidth(y, kernel)
        self.warnings: list[str] = []
        if self.bandwidth is None:
            self.warnings.append(ZERO_SPREAD_WARNING)
        self._signs = signs(masks)
        self._gram = None
        self._scores = None

    @property
    def degenerate(self) -> bool:
        return self.bandwidth is None

    @property
    def norm(self) -> float:
        return float((self.p - 1) ** 2)

    def output_gram(self) -> np.ndarray:
        if self._gram is None:
            self._gram = gram_output(self.outputs, self.kernel, self.bandwidth)
        return self._gram

    def _quad_forms(self, V: np.ndarray) -> np.ndarray:
        """``diag(V^T L V)`` for centred columns ``V``, sweeping L in row blocks."""
        acc = np.zeros(V.shape[1])
        if self._gram is not None:
            return np.einsum("ai,ai->i", V, self._gram @ V)
        for start, stop, block in gram_output_blocks(self.outputs, self.kernel, self.bandwidth):
            acc += np.einsum("ai,ai->i", V[start:stop], block @ V)
        return acc

    def scores(self) -> np.ndarray:
        if self._scores is None:
            if self.degenerate:
                self._scores = np.zeros(self.d)
            else:
                centred = self._signs - self._signs.mean(axis=0)
                self._scores = 0.5 * self._quad_forms(centred) / self.norm
        return self._scores.copy()

    def _check_index(self, i) -> int:
        i = int(i)
        if not 0 <= i < self.d:
            raise ValueError(f"patch index {i} out of range for d={self.d}")
        return i

    def subset(self, indices: Iterable[int]) -> float:
        """HSIC of the patch group under the ANOVA product kernel."""
        idx = [self._check_index(i) for i in indices]
        if not idx:
            raise ValueError("patch subset must be non-empty")
        if len(set(idx)) != len(idx):
            raise ValueError(f"duplicate indices in subset {idx}")
        if self.degenerate:
            return 0.0
        K = gram_anova_subset(self.masks[:, idx])
        return hsic_estimate(K, self.output_gram())

    def interaction(self, i: int, j: int) -> float:
        i, j = self._check_index(i), self._check_index(j)
        if i == j:
            raise ValueError("interaction needs two distinct patches")
        if self.degenerate:
            return 0.0
        scores = self.scores()
        return self.subset([i, j]) - scores[i] - scores[j]

    def interaction_values(self, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
        """Batched interactions, ``(H t)^T L (H t) / 4`` with ``t = s_i * s_j``."""
        pairs = [(self._check_index(i), self._check_index(j)) for i, j in pairs]
        for i, j in pairs:
            if i == j:
                raise ValueError("interaction needs two distinct patches")
        out = np.zeros(len(pairs))
        if self.degenerate or not pairs:
            return out
        first = np.array([i for i, _ in pairs])
        second = np.array([j for _, j in pairs])
        for start in range(0, len(pairs), _PAIR_CHUNK):
            sl = slice(start, start + _PAIR_CHUNK)
            t = self._signs[:, first[sl]] * self._signs[:, second[sl]]
            t -= t.mean(axis=0)
            out[sl] = 0.25 * self._quad_forms(t) / self.norm
        return out

    def interaction_matrix(self, pairs: Optional[Sequence[tuple[int, int]]] = None) -> InteractionMatrix:
        if pairs is None:
            pairs = list(combinations(range(self.d), 2))
        values = self.interaction_values(pairs)
        entries = np.zeros((self.d, self.d))
        for (i, j), v in zip(pairs, values):
            entries[i, j] = entries[j, i] = v
        return InteractionMatrix(entries, warnings=list(self.warnings), evaluated=len(pairs))


def attribute(
    design: MaskDesign,
    outputs,
    kernel: OutputKernel = OutputKernel(),
    grid: Optional[tuple] = None,
) -> AttributionResult:
    """Per-patch HSIC scores between each mask column and the outputs."""
    analysis = HSICAnalysis(design, outputs, kernel)
    if grid is None:
        grid = (analysis.d, 1)
    if grid[0] * grid[1] != analysis.d:
        raise ValueError(f"grid {grid} does not match d={analysis.d}")
    config = {"p": analysis.p, "output_kernel": str(kernel), "bandwidth": analysis.bandwidth}
    if isinstance(design, MaskDesign):
        config.update(sampler=design.sampler, seed=design.seed, prob=design.prob)
    return AttributionResult(analysis.scores(), tuple(grid), config, list(analysis.warnings))


def hsic_subset(design, outputs, indices: Iterable[int], kernel: OutputKernel = OutputKernel()) -> float:
    return HSICAnalysis(design, outputs, kernel).subset(indices)


def interaction(design, outputs, i: int, j: int, kernel: OutputKernel = OutputKernel()) -> float:
    return HSICAnalysis(design, outputs, kernel).interaction(i, j)


def interaction_matrix(
    design,
    outputs,
    kernel: OutputKernel = OutputKernel(),
    pairs: Optional[Sequence[tuple[int, int]]] = None,
    grid: Optional[tuple] = None,
) -> InteractionMatrix:
    analysis = HSICAnalysis(design, outputs, kernel)
    result = analysis.interaction_matrix(pairs)
    result.grid = tuple(grid) if grid is not None else (analysis.d, 1)
    return result
