"""Design -> perturbation -> model -> HSIC."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .design import MaskDesign
from .hsic import AttributionResult, HSICAnalysis
from .kernel import OutputKernel
from .model import MASK, ModelEndpoint, evaluate_batch
from .perturb import PerturbConfig, as_image, cell_inputs, cell_means, perturb_batch


class PerturbedInputs:
    """Lazily built model inputs for a stack of grid masks.

    Slicing materialises only the requested rows, so ``evaluate_batch`` never
    holds more than one chunk of perturbed images in memory.
    """

    def __init__(self, endpoint: ModelEndpoint, x, masks, config: PerturbConfig):
        self.masks = np.atleast_2d(np.asarray(masks))
        if self.masks.shape[1] != config.d:
            raise ValueError(f"masks have {self.masks.shape[1]} cells, grid {config.grid} has {config.d}")
        self.config = config
        self.kind = endpoint.input_kind
        if self.kind == MASK:
            values = np.ones(config.d) if x is None else cell_means(x, config.grid)
            self._cells = cell_inputs(self.masks, values, config.baseline)
            self.x = None
        else:
            if x is None:
                raise ValueError("an input image is required for image-level models")
            self.x = as_image(x)

    def __len__(self) -> int:
        return self.masks.shape[0]

    def __getitem__(self, index):
        if self.kind == MASK:
            return self._cells[index]
        return perturb_batch(self.x, self.masks[index], self.config)


def run_masks(endpoint: ModelEndpoint, x, masks, config: PerturbConfig) -> np.ndarray:
    """Model outputs for ``x`` perturbed by every mask row, ``(n, arity)``."""
    return evaluate_batch(endpoint, PerturbedInputs(endpoint, x, masks, config))


def explain(
    endpoint: ModelEndpoint,
    x,
    design: MaskDesign,
    config: PerturbConfig,
    kernel: OutputKernel = OutputKernel(),
    outputs: Optional[np.ndarray] = None,
) -> tuple[AttributionResult, HSICAnalysis]:
    """HSIC attribution of ``x``; returns the result and the reusable analysis."""
    if design.d != config.d:
        raise ValueError(f"design has d={design.d}, grid {config.grid} has {config.d} cells")
    if design.p < 2:
        raise ValueError("p >= 2 required")
    if outputs is None:
        outputs = run_masks(endpoint, x, design.masks, config)
    analysis = HSICAnalysis(design, outputs, kernel)
    result = AttributionResult(
        analysis.scores(),
        tuple(config.grid),
        {
            "p": design.p,
            "d": design.d,
            "sampler": design.sampler,
            "seed": design.seed,
            "prob": design.prob,
            "output_kernel": str(kernel),
            "bandwidth": analysis.bandwidth,
        },
        list(analysis.warnings),
    )
    return result, analysis
