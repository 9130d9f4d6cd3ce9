"""Candidate preprocessing: location refinement, per-class NMS, detection
splitting, and budget selection.

All operations are pure instance-to-instance transformations.  Candidate ids
are renumbered densely whenever candidates are dropped or added, preserving
the surviving candidates' relative order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import MissingOffset
from .model import Candidate, ProblemInstance, renumber

__all__ = [
    "NmsParams",
    "refine_locations",
    "nms",
    "split_detections",
    "select_top",
]


@dataclass(frozen=True)
class NmsParams:
    """Suppression radius in pixels, candidate budget, and whether the
    pipeline refines locations before suppressing."""

    radius: float = 24.0
    max_total: int = 100
    refine_before_nms: bool = True

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"radius must be > 0, got {self.radius}")
        if self.max_total < 1:
            raise ValueError(f"max_total must be >= 1, got {self.max_total}")


def refine_locations(instance: ProblemInstance) -> ProblemInstance:
    """Shift each candidate by the refinement offset of its argmax-unary class.

    Pulls grid detections toward the true joint location before NMS, which
    densifies detections around true locations.
    """
    refined = []
    for cand in instance.candidates:
        cls = cand.argmax_class()
        if cls not in cand.refine_offset:
            raise MissingOffset(
                f"candidate {cand.id}: no refinement offset for class "
                f"{instance.class_name(cls)}"
            )
        dx, dy = cand.refine_offset[cls]
        loc = (cand.location[0] + dx, cand.location[1] + dy)
        refined.append(replace(cand, location=loc))
    return replace(instance, candidates=tuple(refined))


def nms(instance: ProblemInstance, params: NmsParams) -> ProblemInstance:
    """Per-class greedy non-maximum suppression followed by budget selection.

    Per class, the highest-unary candidate is kept and every other candidate
    within ``radius`` pixels is suppressed for that class; the next unkept
    candidate repeats the step.  A candidate survives if it is a keeper for
    at least one class.  Deterministic: unary ties break toward the lower
    candidate id.
    """
    n = len(instance.candidates)
    if n == 0:
        return instance
    loc = np.array([c.location for c in instance.candidates], dtype=np.float64)
    diff = loc[:, None, :] - loc[None, :, :]
    within = np.hypot(diff[..., 0], diff[..., 1]) <= params.radius

    survivor = np.zeros(n, dtype=bool)
    ids = np.arange(n)
    for cls in range(instance.n_classes):
        unary = np.array(
            [c.unary.get(cls, 0.0) for c in instance.candidates], dtype=np.float64
        )
        order = np.lexsort((ids, -unary))
        suppressed = np.zeros(n, dtype=bool)
        for i in order:
            if suppressed[i]:
                continue
            survivor[i] = True
            suppressed |= within[i]
    kept = tuple(c for c, keep in zip(instance.candidates, survivor) if keep)
    out = replace(instance, candidates=renumber(kept))
    return select_top(out, params.max_total)


def split_detections(instance: ProblemInstance, s: float) -> ProblemInstance:
    """Clone candidates that plausibly host several part classes at once.

    A candidate with two or more classes of unary probability strictly above
    ``s`` is replaced by one clone per such class.  Each clone keeps the
    shared location and the full unary/offset payload but is restricted to
    its designated class (the solver may assign only that class, or
    suppress).  Clone ids are appended densely after the unchanged
    candidates.
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f"split threshold must be in (0, 1), got {s}")
    passthrough: list[Candidate] = []
    clones: list[Candidate] = []
    for cand in instance.candidates:
        hot = sorted(c for c, p in cand.unary.items() if p > s)
        if len(hot) < 2:
            passthrough.append(cand)
            continue
        for cls in hot:
            clones.append(replace(cand, allowed_classes=frozenset({cls})))
    return replace(instance, candidates=renumber(passthrough + clones))


def select_top(
    instance: ProblemInstance, max_total: int, per_part: int | None = None
) -> ProblemInstance:
    """Keep the budgeted number of candidates by max-class unary.

    Global mode keeps the ``max_total`` candidates with the highest
    max-class unary (ties by lower id).  With ``per_part`` set, a candidate
    is kept if it ranks in the top ``per_part`` for at least one class,
    which mirrors a per-part detection budget.
    """
    if max_total < 1:
        raise ValueError(f"max_total must be >= 1, got {max_total}")
    if per_part is not None:
        keep_ids: set[int] = set()
        for cls in range(instance.n_classes):
            ranked = sorted(
                instance.candidates, key=lambda c: (-c.unary.get(cls, 0.0), c.id)
            )
            keep_ids |= {c.id for c in ranked[:per_part]}
        kept = [c for c in instance.candidates if c.id in keep_ids]
    else:
        ranked = sorted(instance.candidates, key=lambda c: (-c.max_unary(), c.id))
        keep_ids = {c.id for c in ranked[:max_total]}
        kept = [c for c in instance.candidates if c.id in keep_ids]
    if len(kept) == len(instance.candidates):
        return instance
    return replace(instance, candidates=renumber(kept))
