"""Shared fixtures: random cost instances and session-scoped trained models."""

from __future__ import annotations

import numpy as np
import pytest

from posecut.candidates import refine_locations
from posecut.costs import CostTable
from posecut.model import Candidate, PartClass, ProblemInstance
from posecut.pairwise import FeatureMode, build_training_set, fit_logistic
from posecut.synth import SynthParams, generate


def make_cost_instance(rng: np.random.Generator, n: int, n_classes: int,
                       restricted=None, fixed=None):
    """Random instance plus a random symmetric cost table for solver tests."""
    restricted = restricted or {}
    fixed = fixed or {}
    classes = tuple(PartClass(i, f"part{i}") for i in range(n_classes))
    cands = []
    for i in range(n):
        unary = {c: float(rng.uniform(0.0, 1.0)) for c in range(n_classes)}
        pair = {
            (a, b): (float(rng.normal(0, 10)), float(rng.normal(0, 10)))
            for a in range(n_classes)
            for b in range(n_classes)
            if a != b
        }
        cands.append(
            Candidate(
                id=i,
                location=(float(rng.uniform(0, 100)), float(rng.uniform(0, 100))),
                unary=unary,
                refine_offset={c: (0.0, 0.0) for c in range(n_classes)},
                pair_offset=pair,
                allowed_classes=frozenset({restricted[i]}) if i in restricted else None,
                fixed_class=fixed.get(i),
            )
        )
    instance = ProblemInstance(classes=classes, candidates=tuple(cands), scale=10.0)

    alpha = rng.normal(0.0, 2.0, size=(n, n_classes))
    raw = rng.normal(0.0, 2.0, size=(n, n, n_classes, n_classes))
    i_idx = np.arange(n)[:, None, None, None]
    j_idx = np.arange(n)[None, :, None, None]
    swapped = np.transpose(raw, (1, 0, 3, 2))
    beta = np.where(i_idx < j_idx, raw, swapped)
    beta[np.arange(n), np.arange(n)] = 0.0
    return instance, CostTable(alpha=alpha, beta=beta, eps=1e-6)


def random_feasible_solution(rng: np.random.Generator, n: int, n_classes: int):
    """Random labeling plus a random partition of the kept candidates."""
    label: dict[int, int | None] = {}
    kept = []
    for d in range(n):
        if rng.uniform() < 0.3:
            label[d] = None
        else:
            label[d] = int(rng.integers(0, n_classes))
            kept.append(d)
    clusters: list[list[int]] = []
    for d in kept:
        if clusters and rng.uniform() < 0.6:
            clusters[int(rng.integers(0, len(clusters)))].append(d)
        else:
            clusters.append([d])
    return label, clusters


TRAIN_PARAMS = dict(persons=3, jitter_sigma=3.0, clutter_rate=2.0,
                    offset_noise_sigma=4.0)


@pytest.fixture(scope="session")
def training_set():
    instances = [
        refine_locations(generate(SynthParams(seed=100 + i, **TRAIN_PARAMS)))
        for i in range(6)
    ]
    return build_training_set(instances)


@pytest.fixture(scope="session")
def model_full(training_set):
    return fit_logistic(training_set, mode=FeatureMode.FULL)[0]


@pytest.fixture(scope="session")
def model_uni(training_set):
    return fit_logistic(training_set, mode=FeatureMode.UNI)[0]


@pytest.fixture(scope="session")
def model_noangle(training_set):
    return fit_logistic(training_set, mode=FeatureMode.NO_ANGLE)[0]
