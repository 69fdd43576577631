"""Binary perturbation mask designs.

A design is a ``p x d`` matrix of 0/1 entries: row ``a`` is the mask applied
to the input for forward pass ``a``, column ``i`` is the on/off state of
patch ``i`` across all passes.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_EXHAUSTIVE_D = 20

LHS = "lhs"
BERNOULLI = "bernoulli"
EXHAUSTIVE = "exhaustive"


@dataclass(frozen=True, eq=False)
class MaskDesign:
    masks: np.ndarray  # (p, d) uint8
    sampler: str
    seed: int = 0
    prob: float = 0.5
    jitter: bool = False
    warnings: list = field(default_factory=list)

    @property
    def p(self) -> int:
        return self.masks.shape[0]

    @property
    def d(self) -> int:
        return self.masks.shape[1]

    @property
    def expected_value(self) -> float:
        """Expected mask value E(M) of the sampling distribution."""
        if self.sampler == BERNOULLI:
            return float(self.prob)
        return 0.5

    def header(self) -> dict:
        return {
            "p": self.p,
            "d": self.d,
            "sampler": self.sampler,
            "prob": self.prob,
            "seed": self.seed,
            "jitter": self.jitter,
        }

    def __eq__(self, other):
        if not isinstance(other, MaskDesign):
            return NotImplemented
        return self.header() == other.header() and np.array_equal(self.masks, other.masks)


def _check_size(p: int, d: int) -> None:
    if int(p) < 1 or int(d) < 1:
        raise ValueError(f"design needs p >= 1 and d >= 1, got p={p}, d={d}")


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def column_rng(seed: int, column: int) -> np.random.Generator:
    """Independent generator for one design column.

    Keyed on ``(seed, column)`` so that changing ``d`` never reshuffles the
    columns that already existed.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, column]))


def sample_lhs_masks(p: int, d: int, seed: int = 0, jitter: bool = False) -> MaskDesign:
    """Latin Hypercube masks thresholded at 0.5.

    Each column permutes the ``p`` strata of ``[0, 1)``, takes the stratum
    midpoint (or a uniform draw inside the stratum when ``jitter``), and keeps
    the patch when the value is ``>= 0.5``. Every column therefore holds
    ``floor(p/2)`` or ``ceil(p/2)`` ones.
    """
    _check_size(p, d)
    seed = _check_seed(seed)
    masks = np.empty((p, d), dtype=np.uint8)
    for j in range(d):
        rng = column_rng(seed, j)
        strata = rng.permutation(p)
        offset = rng.random(p) if jitter else 0.5
        u = (strata + offset) / p
        masks[:, j] = u >= 0.5
    return MaskDesign(masks, LHS, seed=seed, prob=0.5, jitter=jitter)


def sample_bernoulli_masks(p: int, d: int, prob: float = 0.5, seed: int = 0) -> MaskDesign:
    """iid Bernoulli(prob) masks, one seeded substream per column."""
    _check_size(p, d)
    seed = _check_seed(seed)
    prob = float(prob)
    if not 0.0 <= prob <= 1.0:
        raise ValueError(f"prob must lie in [0, 1], got {prob}")
    masks = np.empty((p, d), dtype=np.uint8)
    for j in range(d):
        masks[:, j] = column_rng(seed, j).random(p) < prob
    return MaskDesign(masks, BERNOULLI, seed=seed, prob=prob)


def exhaustive_design(d: int) -> MaskDesign:
    """All ``2**d`` binary rows in lexicographic order (column 0 is the most significant bit)."""
    _check_size(1, d)
    if d > MAX_EXHAUSTIVE_D:
        raise ValueError(f"exhaustive design refused for d={d} > {MAX_EXHAUSTIVE_D}")
    rows = np.arange(2**d, dtype=np.uint32)
    shifts = np.arange(d - 1, -1, -1, dtype=np.uint32)
    masks = ((rows[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return MaskDesign(masks, EXHAUSTIVE, seed=0, prob=0.5)


def make_design(sampler: str, p: int, d: int, seed: int = 0, prob: float = 0.5) -> MaskDesign:
    if sampler == LHS:
        return sample_lhs_masks(p, d, seed)
    if sampler == BERNOULLI:
        return sample_bernoulli_masks(p, d, prob, seed)
    if sampler == EXHAUSTIVE:
        return exhaustive_design(d)
    raise ValueError(f"unknown sampler {sampler!r}")


# -- serialization ---------------------------------------------------------


def design_to_dict(design: MaskDesign) -> dict:
    bits = np.packbits(design.masks.reshape(-1))
    out = design.header()
    out["bits"] = base64.b64encode(bits.tobytes()).decode("ascii")
    return out


def design_from_dict(obj: dict) -> MaskDesign:
    try:
        p, d = int(obj["p"]), int(obj["d"])
        raw = np.frombuffer(base64.b64decode(obj["bits"]), dtype=np.uint8)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed design artifact: {exc}") from exc
    _check_size(p, d)
    bits = np.unpackbits(raw)
    if bits.size < p * d or raw.size != (p * d + 7) // 8:
        raise ValueError("design payload length does not match p*d")
    masks = bits[: p * d].reshape(p, d).astype(np.uint8)
    return MaskDesign(
        masks,
        str(obj.get("sampler", LHS)),
        seed=int(obj.get("seed", 0)),
        prob=float(obj.get("prob", 0.5)),
        jitter=bool(obj.get("jitter", False)),
    )


def save_design(design: MaskDesign, path) -> None:
    Path(path).write_text(json.dumps(design_to_dict(design)) + "\n")


def load_design(path) -> MaskDesign:
    return design_from_dict(json.loads(Path(path).read_text()))
