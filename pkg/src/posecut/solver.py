"""Solvers for the joint partition-and-labeling program.

``solve_exact`` enumerates every labeling (each candidate suppressed or
assigned one allowed class) times every partition of the kept candidates
(restricted-growth strings), so it is only usable on desk-scale instances
and serves as the optimality oracle.  ``solve_heuristic`` is a seeded
multi-restart local search over a rich move set.  ``solve_incremental``
solves a schedule of class subsets in order, contracting each stage's
same-class clusters into single fixed-class candidates for the next stage.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .costs import DEFAULT_EPS, CostTable, build_costs, objective, objective_from_model
from .errors import RefusedTooLarge, ValidationError
from .logutil import log_kv
from .model import Candidate, ProblemInstance, Solution, make_solution, renumber
from .pairwise import PairwiseModel
from .seeding import spawn_rng

__all__ = [
    "StageSchedule",
    "SearchParams",
    "StageTrace",
    "solve_exact",
    "solve_heuristic",
    "solve_incremental",
    "contract_clusters",
    "named_schedule",
    "schedule_from_json",
]

_IMPROVE_TOL = 1e-12


@dataclass(frozen=True)
class StageSchedule:
    """Ordered split of the class roster into disjoint solver stages."""

    stages: tuple[frozenset[int], ...]

    def validate_for(self, n_classes: int) -> None:
        seen: set[int] = set()
        for stage in self.stages:
            if not stage:
                raise ValidationError("schedule contains an empty stage")
            if stage & seen:
                raise ValidationError("schedule stages must be disjoint")
            seen |= stage
        if seen != set(range(n_classes)):
            raise ValidationError("schedule stages must cover every class exactly once")


@dataclass(frozen=True)
class SearchParams:
    """Knobs of the seeded local search."""

    seed: int = 0
    restarts: int = 8
    max_moves: int | None = None  # accepted-move cap; default 50 |D|^2
    accept: str = "strict"

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.accept != "strict":
            raise ValueError(f"unknown acceptance rule {self.accept!r}")


@dataclass
class StageTrace:
    """Diagnostics for one solved stage of the incremental strategy."""

    stage_index: int
    stage_classes: frozenset[int]
    sub_instance: ProblemInstance
    solution: Solution
    contracted: tuple[Candidate, ...]
    origin: tuple[tuple[int, ...], ...]
    millis: float


# ---------------------------------------------------------------------------
# Named schedules
# ---------------------------------------------------------------------------

_GROUPS = (
    ("ankle", "ankles"),
    ("knee", "knees"),
    ("hip", "hips"),
    ("wrist", "wrists"),
    ("elbow", "elbows"),
    ("shoulder", "shoulders"),
)


def _group_of(name: str) -> str:
    low = name.lower()
    for token, group in _GROUPS:
        if token in low:
            return group
    if any(token in low for token in ("chin", "head", "neck", "nose", "eye", "ear")):
        return "head"
    raise ValidationError(
        f"cannot place class {name!r} in a named schedule; use a custom schedule file"
    )


def named_schedule(name: str, classes) -> StageSchedule:
    """Build the 1-stage, 2-stage, or 3-stage schedule for a class roster.

    2-stage solves head/shoulders/elbows/wrists before hips/knees/ankles;
    3-stage solves head/shoulders, then elbows/wrists, then the legs.
    """
    all_ids = frozenset(pc.id for pc in classes)
    if name == "1stage":
        return StageSchedule((all_ids,))
    groups: dict[str, set[int]] = {}
    for pc in classes:
        groups.setdefault(_group_of(pc.name), set()).add(pc.id)
    if name == "2stage":
        plan = [("head", "shoulders", "elbows", "wrists"), ("hips", "knees", "ankles")]
    elif name == "3stage":
        plan = [("head", "shoulders"), ("elbows", "wrists"), ("hips", "knees", "ankles")]
    else:
        raise ValidationError(f"unknown schedule name {name!r}")
    stages = []
    for group_names in plan:
        stage = frozenset().union(*(groups.get(g, set()) for g in group_names))
        if stage:
            stages.append(stage)
    schedule = StageSchedule(tuple(stages))
    schedule.validate_for(len(tuple(classes)))
    return schedule


def schedule_from_json(doc: dict, classes) -> StageSchedule:
    """Schedule from {"stages": [[class names...], ...]}."""
    by_name = {pc.name: pc.id for pc in classes}
    stages = []
    for stage_names in doc["stages"]:
        ids = set()
        for name in stage_names:
            if name not in by_name:
                raise ValidationError(f"schedule names unknown class {name!r}")
            ids.add(by_name[name])
        stages.append(frozenset(ids))
    schedule = StageSchedule(tuple(stages))
    schedule.validate_for(len(tuple(classes)))
    return schedule


# ---------------------------------------------------------------------------
# Exact enumeration
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _partition_pairs(k: int):
    """All partitions of k items as restricted-growth strings, lex order.

    Returns (rgs tuples, pair index arrays pi/pj concatenated over
    partitions, per-partition segment starts, per-partition pair counts).
    """
    rgs_list: list[tuple[int, ...]] = []
    if k == 0:
        return (((),), np.zeros(0, np.int64), np.zeros(0, np.int64),
                np.zeros(1, np.int64), np.zeros(1, np.int64))
    a = [0] * k
    while True:
        rgs_list.append(tuple(a))
        j = k - 1
        while j > 0 and a[j] > max(a[:j]):
            j -= 1
        if j == 0:
            break
        a[j] += 1
        for t in range(j + 1, k):
            a[t] = 0
    pi: list[int] = []
    pj: list[int] = []
    starts: list[int] = []
    counts: list[int] = []
    for rgs in rgs_list:
        starts.append(len(pi))
        before = len(pi)
        for x in range(k):
            for y in range(x + 1, k):
                if rgs[x] == rgs[y]:
                    pi.append(x)
                    pj.append(y)
        counts.append(len(pi) - before)
    return (
        tuple(rgs_list),
        np.asarray(pi, dtype=np.int64),
        np.asarray(pj, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
        np.asarray(counts, dtype=np.int64),
    )


def _clusters_from_rgs(members: list[int], rgs: tuple[int, ...]):
    blocks: dict[int, list[int]] = {}
    for member, block in zip(members, rgs):
        blocks.setdefault(block, []).append(member)
    return list(blocks.values())


def solve_exact(
    instance: ProblemInstance, costs: CostTable, limit: int = 8
) -> Solution:
    """Globally optimal solution by exhaustive enumeration.

    Refuses instances with more than ``limit`` candidates (default 8) or
    more than 4 classes.  Ties are broken by the lexicographically smallest
    encoding (label vector with -1 for suppressed, then the partition's
    restricted-growth string).
    """
    n = len(instance.candidates)
    n_classes = instance.n_classes
    if n > limit:
        raise RefusedTooLarge(f"{n} candidates exceeds the exact-solver limit {limit}")
    if n_classes > 4:
        raise RefusedTooLarge(f"{n_classes} classes exceeds the exact-solver limit 4")

    allowed = [list(c.allowed(n_classes)) for c in instance.candidates]
    must_keep = [c.fixed_class is not None for c in instance.candidates]

    best_obj = np.inf
    best_enc: tuple | None = None
    best_state: tuple | None = None

    for mask in range(1 << n):
        if any(must_keep[d] and not (mask >> d) & 1 for d in range(n)):
            continue
        members = [d for d in range(n) if (mask >> d) & 1]
        k = len(members)
        if k == 0:
            enc = ((-1,) * n, ())
            if 0.0 < best_obj or (0.0 == best_obj and enc < best_enc):
                best_obj, best_enc = 0.0, enc
                best_state = ({d: None for d in range(n)}, [])
            continue
        rgs_list, pi, pj, starts, counts = _partition_pairs(k)
        labelings = np.array(
            list(itertools.product(*[allowed[d] for d in members])), dtype=np.int64
        )
        m_arr = np.asarray(members, dtype=np.int64)
        alpha_sums = costs.alpha[m_arr[None, :], labelings].sum(axis=1)
        total_pairs = len(pi)
        if total_pairs:
            ii = m_arr[pi]
            jj = m_arr[pj]
            bgrid = costs.beta[ii[None, :], jj[None, :], labelings[:, pi], labelings[:, pj]]
            seg = np.minimum(starts, total_pairs - 1)
            part_sums = np.add.reduceat(bgrid, seg, axis=1)
            part_sums[:, counts == 0] = 0.0
        else:
            part_sums = np.zeros((len(labelings), len(rgs_list)), dtype=np.float64)
        grid = alpha_sums[:, None] + part_sums

        # Row-major argmin picks the first minimum; rows follow label lex
        # order and columns follow RGS lex order, so within a subset that is
        # already the lex-smallest encoding among the subset's optima.
        pos = int(grid.argmin())
        local_min = float(grid.flat[pos])
        if local_min > best_obj:
            continue
        row, col = divmod(pos, grid.shape[1])
        labels_full = [-1] * n
        for d, lab in zip(members, labelings[row]):
            labels_full[d] = int(lab)
        enc = (tuple(labels_full), rgs_list[col])
        if local_min < best_obj or enc < best_enc:
            best_obj = local_min
            best_enc = enc
            label = {d: (None if labels_full[d] < 0 else labels_full[d]) for d in range(n)}
            best_state = (label, _clusters_from_rgs(members, rgs_list[col]))

    label, clusters = best_state
    solution = make_solution(label, clusters, 0.0)
    value = objective(instance, costs, solution)
    return replace(solution, objective_value=value)


# ---------------------------------------------------------------------------
# Local search
# ---------------------------------------------------------------------------


class _SearchState:
    """Mutable labeling/partition state with incremental cost bookkeeping.

    ``link[key]`` caches, for cluster ``key``, the (n, C) array of summed
    pairwise costs between every candidate/class and the cluster's members
    under their current labels.  The cost table's beta diagonal is zero, so
    a member's own row can be read without excluding itself.
    """

    def __init__(self, instance: ProblemInstance, costs: CostTable):
        self.n = len(instance.candidates)
        self.n_classes = instance.n_classes
        self.alpha = costs.alpha
        self.beta = costs.beta
        self.allowed = [list(c.allowed(self.n_classes)) for c in instance.candidates]
        self.fixed = np.array(
            [c.fixed_class is not None for c in instance.candidates], dtype=bool
        )
        self.fixed_class = [c.fixed_class for c in instance.candidates]
        self.lab = np.full(self.n, -1, dtype=np.int64)
        self.cl = np.full(self.n, -1, dtype=np.int64)
        self.members: dict[int, list[int]] = {}
        self.link: dict[int, np.ndarray] = {}
        self.fixed_in: dict[int, dict[int, int]] = {}
        self.next_key = 0
        self.obj = 0.0
        self.accepted = 0

    # -- primitive structure updates (objective handled by callers) --------

    def _new_cluster(self, d: int) -> int:
        key = self.next_key
        self.next_key += 1
        self.members[key] = [d]
        self.link[key] = self.beta[:, d, :, self.lab[d]].copy()
        self.cl[d] = key
        fixmap: dict[int, int] = {}
        if self.fixed[d]:
            fixmap[int(self.lab[d])] = 1
        self.fixed_in[key] = fixmap
        return key

    def _add(self, d: int, key: int) -> None:
        self.members[key].append(d)
        self.link[key] += self.beta[:, d, :, self.lab[d]]
        self.cl[d] = key
        if self.fixed[d]:
            fixmap = self.fixed_in[key]
            cls = int(self.lab[d])
            fixmap[cls] = fixmap.get(cls, 0) + 1

    def _remove(self, d: int) -> None:
        key = int(self.cl[d])
        self.members[key].remove(d)
        self.cl[d] = -1
        if self.fixed[d]:
            fixmap = self.fixed_in[key]
            cls = int(self.lab[d])
            fixmap[cls] -= 1
            if fixmap[cls] == 0:
                del fixmap[cls]
        if self.members[key]:
            self.link[key] -= self.beta[:, d, :, self.lab[d]]
        else:
            del self.members[key], self.link[key], self.fixed_in[key]

    def _relabel(self, d: int, cls: int) -> None:
        key = int(self.cl[d])
        self.link[key] += self.beta[:, d, :, cls] - self.beta[:, d, :, self.lab[d]]
        self.lab[d] = cls

    def _fixed_conflict(self, d: int, key: int) -> bool:
        return self.fixed[d] and int(self.lab[d]) in self.fixed_in[key]

    # -- construction -------------------------------------------------------

    def greedy_construct(self) -> None:
        """Best-class-if-rewarding labeling, then agglomerative merging."""
        for d in range(self.n):
            opts = self.allowed[d]
            if not opts:
                continue
            best = min(opts, key=lambda c: (self.alpha[d, c], c))
            if self.fixed[d] or self.alpha[d, best] < 0.0:
                self.lab[d] = best
                self.obj += float(self.alpha[d, best])
                self._new_cluster(d)
        keys = sorted(self.members)
        k = len(keys)
        if k < 2:
            return
        # Merge-delta matrix over the singleton clusters.  Forbidden pairs
        # (two fixed candidates of one class) are priced +inf; row/column
        # addition on merge keeps both the deltas and the inf poisoning
        # correct, because a merged cluster conflicts with a third exactly
        # when either part did.
        reps = np.array([self.members[key][0] for key in keys])
        labs = self.lab[reps]
        delta = self.beta[reps[:, None], reps[None, :], labs[:, None], labs[None, :]].copy()
        np.fill_diagonal(delta, np.inf)
        rep_fixed_cls = np.array(
            [self.fixed_class[r] if self.fixed[r] else -1 for r in reps]
        )
        conflict = (rep_fixed_cls[:, None] >= 0) & (
            rep_fixed_cls[:, None] == rep_fixed_cls[None, :]
        )
        delta[conflict] = np.inf
        while True:
            pos = int(np.argmin(delta))
            p, q = divmod(pos, k)
            if not (delta[p, q] < -_IMPROVE_TOL):
                break
            self.obj += float(delta[p, q])
            for m in list(self.members[keys[q]]):
                self._remove(m)
                self._add(m, keys[p])
            delta[p, :] += delta[q, :]
            delta[:, p] += delta[:, q]
            delta[p, p] = np.inf
            delta[q, :] = np.inf
            delta[:, q] = np.inf

    # -- move evaluation ----------------------------------------------------

    def try_candidate_moves(self, d: int) -> bool:
        lab = int(self.lab[d])
        if lab < 0:
            return self._try_unsuppress(d)
        key = int(self.cl[d])
        row = self.link[key][d]
        base = float(self.alpha[d, lab] + row[lab])
        if not self.fixed[d]:
            for cls in self.allowed[d]:
                if cls == lab:
                    continue
                delta = float(self.alpha[d, cls] + row[cls]) - base
                if delta < -_IMPROVE_TOL:
                    self.obj += delta
                    self._relabel(d, cls)
                    self.accepted += 1
                    return True
        attach = float(row[lab])
        for target in sorted(self.members):
            if target == key:
                continue
            if self._fixed_conflict(d, target):
                continue
            delta = float(self.link[target][d, lab]) - attach
            if delta < -_IMPROVE_TOL:
                self.obj += delta
                self._remove(d)
                self._add(d, target)
                self.accepted += 1
                return True
        if len(self.members[key]) > 1:
            delta = -attach
            if delta < -_IMPROVE_TOL:
                self.obj += delta
                self._remove(d)
                self._new_cluster(d)
                self.accepted += 1
                return True
        if not self.fixed[d]:
            delta = -float(self.alpha[d, lab]) - attach
            if delta < -_IMPROVE_TOL:
                self.obj += delta
                self._remove(d)
                self.lab[d] = -1
                self.accepted += 1
                return True
        return False

    def _try_unsuppress(self, d: int) -> bool:
        for cls in self.allowed[d]:
            gain = float(self.alpha[d, cls])
            if gain < -_IMPROVE_TOL:
                self.obj += gain
                self.lab[d] = cls
                self._new_cluster(d)
                self.accepted += 1
                return True
            for target in sorted(self.members):
                delta = gain + float(self.link[target][d, cls])
                if delta < -_IMPROVE_TOL:
                    self.obj += delta
                    self.lab[d] = cls
                    self._add(d, target)
                    self.accepted += 1
                    return True
        return False

    def try_merge(self, a: int, b: int) -> bool:
        if a not in self.members or b not in self.members:
            return False
        if any(c in self.fixed_in[b] for c in self.fixed_in[a]):
            return False
        mem_a = self.members[a]
        delta = float(self.link[b][mem_a, self.lab[mem_a]].sum())
        if delta < -_IMPROVE_TOL:
            self.obj += delta
            for m in list(self.members[b]):
                self._remove(m)
                self._add(m, a)
            self.accepted += 1
            return True
        return False

    def try_split(self, key: int) -> bool:
        if key not in self.members:
            return False
        mem = sorted(self.members[key])
        k = len(mem)
        if k < 2:
            return False
        m_arr = np.asarray(mem)
        w = self.beta[m_arr[:, None], m_arr[None, :], self.lab[m_arr][:, None], self.lab[m_arr][None, :]]
        if k <= 12:
            n_masks = (1 << (k - 1)) - 1
            if n_masks == 0:
                return False
            masks = np.arange(1, n_masks + 1, dtype=np.int64)
            bits = ((masks[:, None] >> np.arange(k - 1)) & 1).astype(np.float64)
            side_b = np.concatenate([np.zeros((n_masks, 1)), bits], axis=1)
            side_a = 1.0 - side_b
            cross = np.einsum("mi,ij,mj->m", side_a, w, side_b)
            best = int(np.argmax(cross))
            cross_gain = float(cross[best])
            if cross_gain <= _IMPROVE_TOL:
                return False
            move_out = [mem[i] for i in range(k) if side_b[best, i] > 0.5]
        else:
            # greedy bipartition seeded on the most repulsive pair
            iu, ju = np.triu_indices(k, k=1)
            seed_pos = int(np.argmax(w[iu, ju]))
            side_a = {int(iu[seed_pos])}
            side_b = {int(ju[seed_pos])}
            for idx in range(k):
                if idx in side_a or idx in side_b:
                    continue
                cost_in_a = float(w[idx, sorted(side_b)].sum())
                cost_in_b = float(w[idx, sorted(side_a)].sum())
                if cost_in_b < cost_in_a:
                    side_b.add(idx)
                else:
                    side_a.add(idx)
            cross_gain = float(w[np.ix_(sorted(side_a), sorted(side_b))].sum())
            if cross_gain <= _IMPROVE_TOL:
                return False
            move_out = [mem[i] for i in sorted(side_b)]
        # splitting only separates members, so fixed-class exclusivity holds
        self.obj -= cross_gain
        first = move_out[0]
        self._remove(first)
        new_key = self._new_cluster(first)
        for m in move_out[1:]:
            self._remove(m)
            self._add(m, new_key)
        self.accepted += 1
        return True

    # -- search loop ---------------------------------------------------------

    def local_search(self, rng: np.random.Generator, max_moves: int) -> None:
        while self.accepted < max_moves:
            improved = False
            for d in rng.permutation(self.n):
                if self.accepted >= max_moves:
                    break
                if self.try_candidate_moves(int(d)):
                    improved = True
            keys = sorted(self.members)
            pairs = list(itertools.combinations(keys, 2))
            if pairs:
                for idx in rng.permutation(len(pairs)):
                    if self.accepted >= max_moves:
                        break
                    a, b = pairs[int(idx)]
                    if self.try_merge(a, b):
                        improved = True
            keys = sorted(self.members)
            if keys:
                for idx in rng.permutation(len(keys)):
                    if self.accepted >= max_moves:
                        break
                    if self.try_split(keys[int(idx)]):
                        improved = True
            if not improved:
                break

    def snapshot(self) -> tuple[dict[int, int | None], list[list[int]]]:
        label = {
            d: (None if self.lab[d] < 0 else int(self.lab[d])) for d in range(self.n)
        }
        clusters = [sorted(m) for m in self.members.values()]
        return label, clusters


def _one_restart(
    instance: ProblemInstance,
    costs: CostTable,
    params: SearchParams,
    restart: int,
    max_moves: int,
) -> tuple[float, int, Solution]:
    rng = spawn_rng(params.seed, restart)
    state = _SearchState(instance, costs)
    state.greedy_construct()
    state.local_search(rng, max_moves)
    label, clusters = state.snapshot()
    solution = make_solution(label, clusters, 0.0)
    value = objective(instance, costs, solution)
    return value, restart, replace(solution, objective_value=value)


def solve_heuristic(
    instance: ProblemInstance,
    costs: CostTable,
    params: SearchParams,
    threads: int = 1,
) -> Solution:
    """Greedy construction plus seeded first-improvement local search.

    Moves: relabel a candidate, move it to another cluster or a fresh
    singleton, suppress or unsuppress it, merge two clusters, split a
    cluster along its best 2-partition.  The evaluation order is shuffled
    per restart; the best of ``params.restarts`` runs wins (ties go to the
    lower restart index).  Deterministic for a fixed seed, independent of
    the thread count.
    """
    n = len(instance.candidates)
    if n == 0:
        return make_solution({}, [], 0.0)
    max_moves = params.max_moves if params.max_moves is not None else 50 * n * n
    runs = range(params.restarts)
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(
                pool.map(
                    lambda r: _one_restart(instance, costs, params, r, max_moves), runs
                )
            )
    else:
        results = [_one_restart(instance, costs, params, r, max_moves) for r in runs]
    _, _, best = min(results, key=lambda t: (t[0], t[1]))
    return best


# ---------------------------------------------------------------------------
# Incremental multi-stage optimization
# ---------------------------------------------------------------------------


def contract_clusters(
    stage_solution: Solution, sub_instance: ProblemInstance
) -> tuple[Candidate, ...]:
    """One fixed-class candidate per (cluster, class) group of a stage.

    The representative sits at the unary-probability-weighted mean of the
    member locations, keeps the maximum member probability for the fixed
    class (zero elsewhere), and averages the member offsets with the same
    weights.  Member ids are retained as lineage for back-mapping.
    """
    cands = sub_instance.candidates
    out: list[Candidate] = []
    next_id = 0
    for cluster in stage_solution.clusters:
        by_class: dict[int, list[int]] = {}
        for cid in cluster:
            by_class.setdefault(stage_solution.label[cid], []).append(cid)
        for cls in sorted(by_class):
            members = sorted(by_class[cls])
            weights = np.array([cands[m].unary.get(cls, 0.0) for m in members])
            if weights.sum() <= 0.0:
                weights = np.ones(len(members))
            weights = weights / weights.sum()

            locs = np.array([cands[m].location for m in members], dtype=np.float64)
            location = tuple((weights @ locs).tolist())
            unary = {cls: max(cands[m].unary.get(cls, 0.0) for m in members)}

            refine_keys = set(cands[members[0]].refine_offset)
            for m in members[1:]:
                refine_keys &= set(cands[m].refine_offset)
            refine = {}
            for rk in sorted(refine_keys):
                vecs = np.array([cands[m].refine_offset[rk] for m in members])
                refine[rk] = tuple((weights @ vecs).tolist())
            pair = {}
            for pk in sorted(cands[members[0]].pair_offset):
                vecs = np.array([cands[m].pair_offset[pk] for m in members])
                pair[pk] = tuple((weights @ vecs).tolist())

            lineage = tuple(members)
            out.append(
                Candidate(
                    id=next_id,
                    location=location,
                    unary=unary,
                    refine_offset=refine,
                    pair_offset=pair,
                    fixed_class=cls,
                    lineage=lineage,
                )
            )
            next_id += 1
    return tuple(out)


def _budget_filter(
    fresh: list[Candidate], stage_classes: frozenset[int], per_part_budget: int
) -> list[Candidate]:
    keep: set[int] = set()
    for cls in sorted(stage_classes):
        ranked = sorted(fresh, key=lambda c: (-c.unary.get(cls, 0.0), c.id))
        keep |= {c.id for c in ranked[:per_part_budget]}
    return [c for c in fresh if c.id in keep]


def solve_incremental(
    instance: ProblemInstance,
    model: PairwiseModel,
    schedule: StageSchedule,
    params: SearchParams,
    eps: float = DEFAULT_EPS,
    per_part_budget: int | None = 20,
    threads: int = 1,
    trace: list[StageTrace] | None = None,
) -> Solution:
    """Solve class subsets in schedule order with cluster contraction.

    Stage k solves a sub-instance holding the not-yet-consumed candidates
    whose allowed classes intersect the stage (restricted to those classes)
    plus the fixed-class candidates contracted from earlier stages.  Two
    fixed candidates of the same class never share a cluster.  The final
    solution is expressed over the original candidate ids with the
    objective recomputed against the full instance's costs.

    ``per_part_budget`` caps the fresh candidates per stage class; it is
    bypassed for single-stage schedules so a 1-stage schedule reproduces
    ``solve_heuristic`` exactly.
    """
    n_classes = instance.n_classes
    schedule.validate_for(n_classes)
    multi_stage = len(schedule.stages) > 1

    available = set(range(len(instance.candidates)))
    fixed_pool: list[Candidate] = []  # lineage in original-id space
    last: tuple[Solution, tuple[tuple[int, ...], ...]] | None = None

    for k, stage_classes in enumerate(schedule.stages):
        fresh: list[Candidate] = []
        for cid in sorted(available):
            cand = instance.candidates[cid]
            stage_allowed = frozenset(cand.allowed(n_classes)) & stage_classes
            if stage_allowed:
                keep_fixed = cand.fixed_class if cand.fixed_class in stage_allowed else None
                fresh.append(
                    replace(cand, allowed_classes=stage_allowed, fixed_class=keep_fixed)
                )
        if multi_stage and per_part_budget is not None:
            fresh = _budget_filter(fresh, stage_classes, per_part_budget)
        if not fresh:
            # stage matched zero candidates: skipped with a warning line
            log_kv(stage=k + 1, skipped="empty")
            continue

        origin: list[tuple[int, ...]] = [fc.lineage for fc in fixed_pool]
        origin += [(c.id,) for c in fresh]
        sub_cands = renumber(list(fixed_pool) + fresh)
        sub_instance = ProblemInstance(
            classes=instance.classes,
            candidates=sub_cands,
            scale=instance.scale,
            ground_truth=None,
        )
        t0 = time.perf_counter()
        sub_costs = build_costs(sub_instance, model, eps)
        sub_solution = solve_heuristic(sub_instance, sub_costs, params, threads=threads)
        millis = (time.perf_counter() - t0) * 1000.0
        log_kv(stage=k + 1, objective=sub_solution.objective_value, millis=millis)

        for sub_id, lab in sub_solution.label.items():
            if lab is not None:
                for orig in origin[sub_id]:
                    available.discard(orig)
        contracted = contract_clusters(sub_solution, sub_instance)
        fixed_pool = [
            replace(
                fc,
                lineage=tuple(
                    sorted(orig for m in fc.lineage for orig in origin[m])
                ),
            )
            for fc in contracted
        ]
        last = (sub_solution, tuple(origin))
        if trace is not None:
            trace.append(
                StageTrace(
                    stage_index=k,
                    stage_classes=stage_classes,
                    sub_instance=sub_instance,
                    solution=sub_solution,
                    contracted=tuple(fixed_pool),
                    origin=tuple(origin),
                    millis=millis,
                )
            )

    label: dict[int, int | None] = {c.id: None for c in instance.candidates}
    clusters: list[list[int]] = []
    if last is not None:
        sub_solution, origin = last
        for sub_id, lab in sub_solution.label.items():
            if lab is not None:
                for orig in origin[sub_id]:
                    label[orig] = lab
        for cluster in sub_solution.clusters:
            expanded: list[int] = []
            for sub_id in cluster:
                expanded.extend(origin[sub_id])
            clusters.append(sorted(expanded))
    solution = make_solution(label, clusters, 0.0)
    value = objective_from_model(instance, model, solution, eps)
    return replace(solution, objective_value=value)
