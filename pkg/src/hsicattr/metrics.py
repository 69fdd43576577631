"""Fidelity metrics, rank correlation and the RISE / Occlusion baselines.

Metrics work at grid-cell granularity: a "variable" is one patch, and
removing it means setting that patch to the baseline through the same
inpainting operator used for explanation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .design import LHS, make_design
from .hsic import AttributionResult
from .kernel import OutputKernel
from .model import ModelEndpoint
from .perturb import PerturbConfig
from .pipeline import explain, run_masks


class UndefinedCorrelationError(ValueError):
    """Correlation requested for data with zero variance."""


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("correlation needs two 1-D vectors of equal length >= 2")
    da, db = a - a.mean(), b - b.mean()
    ssa, ssb = float(da @ da), float(db @ db)
    if ssa == 0.0 or ssb == 0.0:
        side = "first" if ssa == 0.0 else "second"
        raise UndefinedCorrelationError(f"{side} vector has zero variance")
    return float(np.clip((da @ db) / np.sqrt(ssa * ssb), -1.0, 1.0))


def spearman(a, b) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("spearman needs two 1-D vectors of equal length >= 2")
    return pearson(rankdata(a), rankdata(b))


def importance_order(scores) -> np.ndarray:
    """Cell indices by decreasing score, ties by increasing index."""
    s = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(s.size), -s))


def auc(fractions, values) -> float:
    return float(trapezoid(values, fractions))


@dataclass
class Curve:
    fractions: np.ndarray
    values: np.ndarray
    auc: float

    def points(self) -> list:
        return [[float(f), float(v)] for f, v in zip(self.fractions, self.values)]


def _step_counts(d: int, steps: int) -> np.ndarray:
    if int(steps) < 1:
        raise ValueError("steps must be >= 1")
    t = np.arange(steps + 1)
    return (2 * t * d + steps) // (2 * steps)


def _scalar(outputs: np.ndarray, output_index: int) -> np.ndarray:
    return outputs[:, output_index]


def _curve(endpoint, x, config, rows, counts, batched, output_index) -> Curve:
    if batched:
        values = _scalar(run_masks(endpoint, x, rows, config), output_index)
    else:
        values = np.array([_scalar(run_masks(endpoint, x, r[None], config), output_index)[0] for r in rows])
    fractions = counts / config.d
    return Curve(fractions, values, auc(fractions, values))


def deletion_curve(
    endpoint: ModelEndpoint,
    x,
    scores,
    config: PerturbConfig,
    steps: Optional[int] = None,
    batched: bool = True,
    output_index: int = 0,
) -> Curve:
    """Score as the most important cells are set to the baseline, k at a time."""
    d = config.d
    if len(scores) != d:
        raise ValueError(f"got {len(scores)} scores for {d} cells")
    counts = _step_counts(d, steps or d)
    order = importance_order(scores)
    rows = np.ones((counts.size, d), dtype=np.uint8)
    for r, k in enumerate(counts):
        rows[r, order[:k]] = 0
    return _curve(endpoint, x, config, rows, counts, batched, output_index)


def insertion_curve(
    endpoint: ModelEndpoint,
    x,
    scores,
    config: PerturbConfig,
    steps: Optional[int] = None,
    batched: bool = True,
    output_index: int = 0,
) -> Curve:
    """Score as the most important cells are restored onto an all-baseline input."""
    d = config.d
    if len(scores) != d:
        raise ValueError(f"got {len(scores)} scores for {d} cells")
    counts = _step_counts(d, steps or d)
    order = importance_order(scores)
    rows = np.zeros((counts.size, d), dtype=np.uint8)
    for r, k in enumerate(counts):
        rows[r, order[:k]] = 1
    return _curve(endpoint, x, config, rows, counts, batched, output_index)


def subset_size(d: int, k_fraction: float) -> int:
    return max(1, int(np.floor(k_fraction * d + 0.5)))


def mu_fidelity(
    endpoint: ModelEndpoint,
    x,
    scores,
    config: PerturbConfig,
    k_fraction: float = 0.2,
    subset_count: int = 200,
    seed: int = 0,
    output_index: int = 0,
) -> float:
    """Correlation between summed scores of random cell subsets and the score drop they cause."""
    if not 0.0 < k_fraction < 1.0:
        raise ValueError("k_fraction must lie in (0, 1)")
    if subset_count < 2:
        raise ValueError("subset_count must be >= 2")
    d = config.d
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size != d:
        raise ValueError(f"got {scores.size} scores for {d} cells")
    size = subset_size(d, k_fraction)
    rng = np.random.default_rng(seed)
    rows = np.ones((subset_count + 1, d), dtype=np.uint8)
    attributed = np.empty(subset_count)
    for n in range(subset_count):
        subset = rng.choice(d, size=size, replace=False)
        rows[n + 1, subset] = 0
        attributed[n] = scores[subset].sum()
    values = _scalar(run_masks(endpoint, x, rows, config), output_index)
    drops = values[0] - values[1:]
    return pearson(attributed, drops)


@dataclass
class FidelityReport:
    deletion: Optional[Curve] = None
    insertion: Optional[Curve] = None
    mu_fidelity: Optional[float] = None
    config: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"config": self.config, "diagnostics": list(self.diagnostics)}
        if self.deletion is not None:
            out["deletionCurve"] = self.deletion.points()
            out["deletionAUC"] = self.deletion.auc
        if self.insertion is not None:
            out["insertionCurve"] = self.insertion.points()
            out["insertionAUC"] = self.insertion.auc
        out["muFidelity"] = self.mu_fidelity
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "fraction", "score"])
        for name, curve in (("deletion", self.deletion), ("insertion", self.insertion)):
            if curve is not None:
                for f, v in curve.points():
                    writer.writerow([name, repr(f), repr(v)])
        return buf.getvalue()


def fidelity_report(
    endpoint: ModelEndpoint,
    x,
    scores,
    config: PerturbConfig,
    metrics: Sequence[str] = ("deletion", "insertion", "mufidelity"),
    steps: Optional[int] = None,
    k_fraction: float = 0.2,
    subset_count: int = 200,
    seed: int = 0,
) -> FidelityReport:
    unknown = set(metrics) - {"deletion", "insertion", "mufidelity"}
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    report = FidelityReport(
        config={
            "steps": steps or config.d,
            "subset_count": subset_count,
            "k_fraction": k_fraction,
            "baseline": config.baseline,
            "seed": seed,
        }
    )
    if "deletion" in metrics:
        report.deletion = deletion_curve(endpoint, x, scores, config, steps)
    if "insertion" in metrics:
        report.insertion = insertion_curve(endpoint, x, scores, config, steps)
    if "mufidelity" in metrics:
        try:
            report.mu_fidelity = mu_fidelity(endpoint, x, scores, config, k_fraction, subset_count, seed)
        except UndefinedCorrelationError as exc:
            report.diagnostics.append(f"muFidelity undefined: {exc}")
    return report


# -- baselines ---------------------------------------------------------------


def occlusion_attribution(endpoint: ModelEndpoint, x, config: PerturbConfig, output_index: int = 0) -> AttributionResult:
    """``f(x) - f(x with cell i at the baseline)`` for every cell; d + 1 model calls."""
    d = config.d
    rows = np.ones((d + 1, d), dtype=np.uint8)
    rows[np.arange(1, d + 1), np.arange(d)] = 0
    values = _scalar(run_masks(endpoint, x, rows, config), output_index)
    scores = values[0] - values[1:]
    return AttributionResult(scores, tuple(config.grid), {"method": "occlusion", "baseline": config.baseline})


def rise_attribution(
    endpoint: ModelEndpoint, x, design, config: PerturbConfig, output_index: int = 0
) -> AttributionResult:
    """``sum_n f(x * m_n) m_n / (E(M) N)`` with the masks of ``design``."""
    if design.p < 1:
        raise ValueError("RISE needs a non-empty design")
    expected = design.expected_value
    if not expected > 0:
        raise ValueError("RISE needs E(M) > 0")
    zero_baseline = PerturbConfig(config.grid, 0.0, config.upsampling)
    values = _scalar(run_masks(endpoint, x, design.masks, zero_baseline), output_index)
    masks = design.masks.astype(np.float64)
    scores = (values @ masks) / (expected * design.p)
    warnings = []
    empty = np.flatnonzero(masks.sum(axis=0) == 0)
    if empty.size:
        scores[empty] = 0.0
        warnings.append(f"cells never unmasked, scored 0: {empty.tolist()}")
    return AttributionResult(
        scores,
        tuple(config.grid),
        {"method": "rise", "p": design.p, "sampler": design.sampler, "seed": design.seed, "prob": design.prob},
        warnings,
    )


# -- convergence -------------------------------------------------------------


def convergence_study(
    endpoint: ModelEndpoint,
    x,
    config: PerturbConfig,
    p_schedule: Sequence[int],
    p_reference: int,
    seed: int = 1,
    reference_seed: int = 0,
    sampler: str = LHS,
    kernel: OutputKernel = OutputKernel(),
    reference: Optional[np.ndarray] = None,
) -> list[tuple[int, float]]:
    """Spearman correlation of attributions at each ``p`` against a large-``p`` reference.

    ``reference`` skips recomputing the reference scores when studying
    several seeds.
    """
    if not p_schedule:
        raise ValueError("empty p schedule")
    if max(p_schedule) > p_reference:
        raise ValueError("reference sample count must be at least the largest scheduled p")
    if reference is None:
        reference = reference_attribution(endpoint, x, config, p_reference, reference_seed, sampler, kernel)
    out = []
    for p in p_schedule:
        design = make_design(sampler, p, config.d, seed)
        result, _ = explain(endpoint, x, design, config, kernel)
        out.append((int(p), spearman(result.scores, reference)))
    return out


def reference_attribution(
    endpoint, x, config, p_reference, seed=0, sampler=LHS, kernel=OutputKernel()
) -> np.ndarray:
    design = make_design(sampler, p_reference, config.d, seed)
    result, _ = explain(endpoint, x, design, config, kernel)
    return result.scores
