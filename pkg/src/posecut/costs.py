"""Cost construction and the objective/feasibility semantics of the joint
partition-and-labeling program.

A solution pays the unary log-odds cost of every labeled candidate plus the
pairwise log-odds cost of every same-cluster candidate pair under their
labels; suppressed candidates contribute nothing.  Probabilities are clamped
away from {0, 1} before the log-odds map so all costs stay finite, and the
whole program is a minimization (rewards are negative costs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSolution
from .model import ProblemInstance, Solution, validate_solution
from .pairwise import (
    FeatureMode,
    PairwiseModel,
    feature_block,
    probabilities_from_features,
    same_class_feature_block,
)

__all__ = [
    "CostTable",
    "build_costs",
    "objective",
    "objective_from_model",
    "derive_pair_indicators",
    "dump_costs",
]

BIG = 1e6
DEFAULT_EPS = 1e-6


@dataclass(frozen=True)
class CostTable:
    """Dense unary and pairwise costs in log-odds form.

    ``alpha[d, c]`` is the cost of labeling candidate d with class c
    (``BIG`` for classes a restriction forbids).  ``beta[d, d', c, c']`` is
    the cost of putting d (as c) and d' (as c') in one cluster; it is
    symmetric under exchanging (d, c) with (d', c') and has a zero diagonal.
    """

    alpha: np.ndarray
    beta: np.ndarray
    eps: float

    @property
    def n_candidates(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_classes(self) -> int:
        return self.alpha.shape[1]


def _log_odds(p: np.ndarray, eps: float) -> np.ndarray:
    q = np.clip(p, eps, 1.0 - eps)
    return np.log((1.0 - q) / q)


def build_costs(
    instance: ProblemInstance, model: PairwiseModel, eps: float = DEFAULT_EPS
) -> CostTable:
    """Turn unary probabilities and the pairwise model into a cost table.

    Pairwise costs are computed only for class pairs some candidate pair can
    actually realize (labels outside a candidate's restriction are priced at
    ``BIG`` and never chosen); unrealizable entries stay 0 and are never
    read by a feasible solution.
    """
    if not (0.0 < eps < 0.5):
        raise ValueError(f"eps must be in (0, 0.5), got {eps}")
    model.check_roster(instance.classes)
    n = len(instance.candidates)
    n_classes = instance.n_classes

    unary = np.zeros((n, n_classes), dtype=np.float64)
    for i, cand in enumerate(instance.candidates):
        for cls, p in cand.unary.items():
            unary[i, cls] = p
    alpha = _log_odds(unary, eps)
    for i, cand in enumerate(instance.candidates):
        allowed = cand.allowed(n_classes)
        if len(allowed) < n_classes:
            forbidden = np.ones(n_classes, dtype=bool)
            forbidden[list(allowed)] = False
            alpha[i, forbidden] = BIG

    beta = np.zeros((n, n, n_classes, n_classes), dtype=np.float64)
    if n >= 2:
        realizable = sorted(
            {cls for cand in instance.candidates for cls in cand.allowed(n_classes)}
        )
        loc = np.array([c.location for c in instance.candidates], dtype=np.float64)
        for c in realizable:
            for c_prime in (x for x in realizable if x >= c):
                w = model.weight_vector(c, c_prime)
                if c == c_prime:
                    feats = same_class_feature_block(loc, loc, instance.scale)
                else:
                    off_f = np.array(
                        [cand.pair_offset[(c, c_prime)] for cand in instance.candidates]
                    )
                    off_b = np.array(
                        [cand.pair_offset[(c_prime, c)] for cand in instance.candidates]
                    )
                    feats, _ = feature_block(loc, off_f, loc, off_b, instance.scale)
                grid = _log_odds(probabilities_from_features(feats, w, model.mode), eps)
                np.fill_diagonal(grid, 0.0)
                beta[:, :, c, c_prime] = grid
                beta[:, :, c_prime, c] = grid.T
    return CostTable(alpha=alpha, beta=beta, eps=eps)


def _cluster_pairs(cluster: tuple[int, ...]):
    for a_idx in range(len(cluster)):
        for b_idx in range(a_idx + 1, len(cluster)):
            yield cluster[a_idx], cluster[b_idx]


def objective(instance: ProblemInstance, costs: CostTable, solution: Solution) -> float:
    """Total cost of a feasible solution.

    Cluster and member orderings are canonicalized internally, so the value
    is invariant under relisting.
    """
    report = validate_solution(instance, solution)
    if not report.ok:
        raise InfeasibleSolution("; ".join(report.violations))
    alpha_terms = [
        costs.alpha[cid, lab]
        for cid, lab in sorted(solution.label.items())
        if lab is not None
    ]
    beta_terms = []
    clusters = sorted((tuple(sorted(c)) for c in solution.clusters), key=lambda c: c or (0,))
    for cluster in clusters:
        for a, b in _cluster_pairs(cluster):
            beta_terms.append(costs.beta[a, b, solution.label[a], solution.label[b]])
    total = 0.0
    if alpha_terms:
        total += float(np.sum(np.asarray(alpha_terms, dtype=np.float64)))
    if beta_terms:
        total += float(np.sum(np.asarray(beta_terms, dtype=np.float64)))
    return total


def objective_from_model(
    instance: ProblemInstance,
    model: PairwiseModel,
    solution: Solution,
    eps: float = DEFAULT_EPS,
) -> float:
    """Objective evaluated directly from the model, without the dense table.

    Computes exactly the terms ``objective`` would read, using the same
    elementwise kernels as ``build_costs``, so multi-stage solvers can price
    a final solution on the full instance without materializing an
    O(n^2 |C|^2) array.
    """
    report = validate_solution(instance, solution)
    if not report.ok:
        raise InfeasibleSolution("; ".join(report.violations))
    model.check_roster(instance.classes)

    alpha_terms = []
    for cid, lab in sorted(solution.label.items()):
        if lab is None:
            continue
        p = np.asarray(instance.candidates[cid].unary.get(lab, 0.0), dtype=np.float64)
        alpha_terms.append(_log_odds(p, eps))
    beta_terms = []
    cands = instance.candidates
    clusters = sorted((tuple(sorted(c)) for c in solution.clusters), key=lambda c: c or (0,))
    for cluster in clusters:
        for a, b in _cluster_pairs(cluster):
            ca, cb = solution.label[a], solution.label[b]
            c, c_prime = min(ca, cb), max(ca, cb)
            d, d_prime = (a, b) if ca <= cb else (b, a)
            la = np.asarray([cands[d].location], dtype=np.float64)
            lb = np.asarray([cands[d_prime].location], dtype=np.float64)
            if c == c_prime:
                feats = same_class_feature_block(la, lb, instance.scale)
            else:
                feats, _ = feature_block(
                    la,
                    np.asarray([cands[d].pair_offset[(c, c_prime)]], dtype=np.float64),
                    lb,
                    np.asarray([cands[d_prime].pair_offset[(c_prime, c)]], dtype=np.float64),
                    instance.scale,
                )
            w = model.weight_vector(c, c_prime)
            q = probabilities_from_features(feats, w, model.mode)
            beta_terms.append(_log_odds(q, eps)[0, 0])
    total = 0.0
    if alpha_terms:
        total += float(np.sum(np.asarray(alpha_terms, dtype=np.float64)))
    if beta_terms:
        total += float(np.sum(np.asarray(beta_terms, dtype=np.float64)))
    return total


def derive_pair_indicators(solution: Solution) -> dict[tuple[int, int], int]:
    """Pairwise same-person indicators over all unordered candidate pairs.

    By construction of the partition representation the indicators satisfy
    transitivity and are coupled to labeling (a suppressed candidate shares
    a cluster with nothing).
    """
    ids = sorted(solution.label)
    member_of: dict[int, int] = {}
    for k, cluster in enumerate(solution.clusters):
        for cid in cluster:
            member_of[cid] = k
    out: dict[tuple[int, int], int] = {}
    for i_idx in range(len(ids)):
        for j_idx in range(i_idx + 1, len(ids)):
            a, b = ids[i_idx], ids[j_idx]
            same = a in member_of and b in member_of and member_of[a] == member_of[b]
            out[(a, b)] = 1 if same else 0
    return out


def dump_costs(instance: ProblemInstance, costs: CostTable) -> dict:
    """JSON-friendly view of a cost table for solver-independent debugging.

    Beta entries are emitted in canonical orientation only (d < d', c <= c').
    Large for big instances; intended for desk-scale debugging.
    """
    names = [pc.name for pc in instance.classes]
    n, n_classes = costs.alpha.shape
    alpha = {
        f"{d}:{names[c]}": float(costs.alpha[d, c])
        for d in range(n)
        for c in range(n_classes)
    }
    beta = {}
    for d in range(n):
        for d_prime in range(d + 1, n):
            for c in range(n_classes):
                for c_prime in range(c, n_classes):
                    beta[f"{d},{d_prime}:{names[c]},{names[c_prime]}"] = float(
                        costs.beta[d, d_prime, c, c_prime]
                    )
    return {"eps": costs.eps, "alpha": alpha, "beta": beta}
