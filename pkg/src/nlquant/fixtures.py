"""Named reference fixtures shared by the tests and ``nlquant --paper-fixtures``."""

from __future__ import annotations

import numpy as np

from . import adc
from .data import ActivationBatch, make_batches
from .quantizers import QuantizerModel, map_references

# 3-bit power-of-two quantizer over [0, 8]
WORKED_CENTERS = (0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0)
WORKED_REFERENCES = (0.0, 0.0625, 0.1875, 0.375, 0.75, 1.5, 3.0, 6.0)
WORKED_MULTIPLIERS = (1, 2, 3, 6, 12, 24, 48)
WORKED_UNIT_STEP = 0.0625

# replica-column ramp for a 4-bit converter using 32 cells
STEP_PATTERN_4BIT = (1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 3, 3, 4, 4, 5)
STEP_PATTERN_UNIT = 0.125

# converter setting used for the corner-noise studies
CORNER_MIN_MULTIPLIER = 10


def worked_model() -> QuantizerModel:
    return QuantizerModel(3, WORKED_CENTERS, map_references(WORKED_CENTERS), "bskmq", 0.0, 8.0)


def worked_batches(n_batches: int = 4) -> list[ActivationBatch]:
    """Batches whose calibration range is exactly (0, 8) and whose interior
    mass sits on the six inner centers, so a 3-bit fit recovers them."""
    counts = [200, 100, 100, 100, 100, 100, 100, 200]
    v = np.repeat(np.array(WORKED_CENTERS), counts)
    return make_batches([v] * n_batches, source_tag="worked_example")


def step_pattern_model() -> QuantizerModel:
    """4-bit model whose references are the ramp levels of
    :data:`STEP_PATTERN_4BIT`; each center sits mid-cell."""
    refs = STEP_PATTERN_UNIT * np.concatenate([[0], np.cumsum(STEP_PATTERN_4BIT)])
    top = refs[-1] + STEP_PATTERN_UNIT * STEP_PATTERN_4BIT[-1]
    edges = np.append(refs, top)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return QuantizerModel(4, tuple(centers), tuple(refs), "kmeans", 0.0, float(top), hw_projected=True)


def corner_settings() -> dict:
    out = {}
    for corner in adc.CORNERS:
        n = adc.corner_noise(corner)
        out[corner] = {"mu": n.mu, "sigma": n.sigma}
    return {"min_multiplier": CORNER_MIN_MULTIPLIER, "budget": adc.DEFAULT_BUDGET, "noise": out}


def all_fixtures() -> dict:
    """Every named fixture as plain JSON-ready data."""
    pattern = step_pattern_model()
    return {
        "worked_example": {
            "model": worked_model().to_dict(),
            "multipliers": list(WORKED_MULTIPLIERS),
            "unit_step": WORKED_UNIT_STEP,
            "probes": {"0.05": 0.0, "0.07": 0.125},
        },
        "corner_noise": corner_settings(),
        "step_pattern_4bit": {
            "model": pattern.to_dict(),
            "multipliers": list(STEP_PATTERN_4BIT),
            "unit_step": STEP_PATTERN_UNIT,
            "cells": sum(STEP_PATTERN_4BIT),
        },
    }
