"""Independent brute-force implementations used as test oracles.

Everything here re-derives results by the most literal enumeration
available and shares no code with the package internals it checks.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def set_partitions(items):
    """Every partition of ``items`` into non-empty blocks (recursive)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for partial in set_partitions(rest):
        yield [[first]] + partial
        for i in range(len(partial)):
            yield partial[:i] + [[first] + partial[i]] + partial[i + 1 :]


@lru_cache(maxsize=16)
def _partition_pair_indices(k: int):
    """For each partition of range(k): the within-block pair index arrays."""
    out = []
    for partition in set_partitions(range(k)):
        pi, pj = [], []
        for block in partition:
            for a, b in itertools.combinations(sorted(block), 2):
                pi.append(a)
                pj.append(b)
        out.append((np.asarray(pi, dtype=np.intp), np.asarray(pj, dtype=np.intp)))
    return tuple(out)


def brute_force_optimum(alpha, beta, allowed, must_keep=None) -> float:
    """Minimum objective over every labeling times every kept-set partition."""
    n = alpha.shape[0]
    if must_keep is None:
        must_keep = [False] * n
    options = [
        ([] if must_keep[d] else [None]) + list(allowed[d]) for d in range(n)
    ]
    best = math.inf
    for labels in itertools.product(*options):
        kept = [d for d in range(n) if labels[d] is not None]
        asum = float(sum(alpha[d, labels[d]] for d in kept))
        if not kept:
            best = min(best, asum)
            continue
        kept_arr = np.asarray(kept, dtype=np.intp)
        lab_arr = np.asarray([labels[d] for d in kept], dtype=np.intp)
        blab = beta[kept_arr[:, None], kept_arr[None, :], lab_arr[:, None], lab_arr[None, :]]
        for pi, pj in _partition_pair_indices(len(kept)):
            obj = asum + float(blab[pi, pj].sum()) if len(pi) else asum
            if obj < best:
                best = obj
    return best


def naive_nms_survivors(locations, unaries_by_class, radius) -> set[int]:
    """Literal per-class greedy suppression; survivors keep for >= 1 class."""
    n = len(locations)
    survivors: set[int] = set()
    for unary in unaries_by_class:
        order = sorted(range(n), key=lambda i: (-unary[i], i))
        state: dict[int, str] = {}
        for i in order:
            if i in state:
                continue
            state[i] = "kept"
            for j in order:
                if j in state:
                    continue
                if math.dist(locations[i], locations[j]) <= radius:
                    state[j] = "suppressed"
        survivors |= {i for i, s in state.items() if s == "kept"}
    return survivors


def naive_objective(label, clusters, alpha, beta) -> float:
    """Direct summation of the labeling and clustering costs."""
    total = 0.0
    for cid, lab in label.items():
        if lab is not None:
            total += float(alpha[cid, lab])
    for cluster in clusters:
        members = sorted(cluster)
        for x in range(len(members)):
            for y in range(x + 1, len(members)):
                a, b = members[x], members[y]
                total += float(beta[a, b, label[a], label[b]])
    return total


def xyz_violations(n: int, n_classes: int, label, clusters) -> list[str]:
    """Check the derived 0/1 assignment against the program's constraints.

    Builds x (labeling), y (same-cluster), z (joint) literally and verifies
    label uniqueness, label/cluster coupling, transitivity, and the
    z = x * x * y linking identity with triple loops.
    """
    x = np.zeros((n, n_classes), dtype=int)
    for cid, lab in label.items():
        if lab is not None:
            x[cid, lab] = 1
    member_of = {}
    for k, cluster in enumerate(clusters):
        for cid in cluster:
            member_of[cid] = k
    y = np.zeros((n, n), dtype=int)
    for a in range(n):
        for b in range(n):
            if a != b and a in member_of and b in member_of:
                y[a, b] = int(member_of[a] == member_of[b])

    bad: list[str] = []
    for d in range(n):
        if x[d].sum() > 1:
            bad.append(f"x uniqueness violated at {d}")
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            if y[a, b] != y[b, a]:
                bad.append(f"y symmetry violated at ({a},{b})")
            if y[a, b] > x[a].sum() or y[a, b] > x[b].sum():
                bad.append(f"y/x coupling violated at ({a},{b})")
    for a, b, c in itertools.permutations(range(n), 3):
        if y[a, b] + y[b, c] - y[a, c] > 1:
            bad.append(f"transitivity violated at ({a},{b},{c})")
    for a in range(n):
        for b in range(n):
            if a == b:
                continue
            for ca in range(n_classes):
                for cb in range(n_classes):
                    z = x[a, ca] * x[b, cb] * y[a, b]
                    expected = int(
                        label.get(a) == ca and label.get(b) == cb and y[a, b] == 1
                    )
                    if z != expected:
                        bad.append(f"z linking violated at ({a},{b},{ca},{cb})")
    return bad
