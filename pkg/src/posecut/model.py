"""Domain types, instance/solution file IO, and feasibility validation.

The instance document is UTF-8 JSON with top-level keys ``classes``,
``scale``, ``candidates`` and optionally ``ground_truth``.  Serialization is
canonical: keys are emitted in a fixed order and per-class maps are ordered
by class id, so ``save(load(x)) == x`` holds byte-for-byte for canonical
documents.  Unknown keys are rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .errors import ParseError, SchemaError, ValidationError

__all__ = [
    "PartClass",
    "Candidate",
    "ProblemInstance",
    "GroundTruthPose",
    "Solution",
    "FeasibilityReport",
    "make_solution",
    "validate_instance",
    "validate_solution",
    "load_instance",
    "save_instance",
    "load_solution",
    "save_solution",
]

Vec2 = tuple[float, float]


@dataclass(frozen=True)
class PartClass:
    """One body part class (e.g. "r_knee"). Ids are dense 0..|C|-1."""

    id: int
    name: str
    stage_hint: int | None = None


@dataclass(frozen=True)
class Candidate:
    """One putative body-part detection.

    ``unary`` maps class id to a probability in [0, 1]; classes missing from
    the map count as probability 0.  ``pair_offset`` maps an ordered class
    pair (c, c') to the regressed offset from this detection (viewed as class
    c) to the expected location of class c'; it must be dense over all
    ordered pairs of the instance roster.  ``allowed_classes`` restricts the
    labels a solver may assign (None means unrestricted); detection splitting
    produces singleton restrictions.  ``fixed_class`` is set only by cluster
    contraction between solver stages and implies the candidate can neither
    be suppressed nor relabeled.  ``lineage`` carries the ids of the
    candidates a contracted candidate aggregates.
    """

    id: int
    location: Vec2
    unary: dict[int, float]
    refine_offset: dict[int, Vec2] = field(default_factory=dict)
    pair_offset: dict[tuple[int, int], Vec2] = field(default_factory=dict)
    allowed_classes: frozenset[int] | None = None
    fixed_class: int | None = None
    lineage: tuple[int, ...] = ()

    def allowed(self, n_classes: int) -> tuple[int, ...]:
        """Class ids a solver may assign to this candidate, ascending."""
        if self.fixed_class is not None:
            return (self.fixed_class,)
        if self.allowed_classes is not None:
            return tuple(sorted(self.allowed_classes))
        return tuple(range(n_classes))

    def max_unary(self) -> float:
        return max(self.unary.values(), default=0.0)

    def argmax_class(self) -> int:
        """Class with the highest unary, ties broken by lower class id."""
        if not self.unary:
            raise ValidationError(f"candidate {self.id}: empty unary map")
        return min(self.unary, key=lambda c: (-self.unary[c], c))


@dataclass(frozen=True)
class GroundTruthPose:
    person_id: int
    head_size: float
    joints: dict[int, Vec2]


@dataclass(frozen=True)
class ProblemInstance:
    """A full problem instance: class roster, candidates, person scale.

    ``scale`` is the reference person scale in pixels (head-segment length)
    used to normalize distances in pairwise features.
    """

    classes: tuple[PartClass, ...]
    candidates: tuple[Candidate, ...]
    scale: float
    ground_truth: tuple[GroundTruthPose, ...] | None = None

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def class_name(self, cid: int) -> str:
        return self.classes[cid].name

    def class_id(self, name: str) -> int:
        for pc in self.classes:
            if pc.name == name:
                return pc.id
        raise ValidationError(f"unknown class name {name!r}")


@dataclass(frozen=True)
class Solution:
    """A labeling plus a partition of the kept candidates into clusters.

    ``label`` covers every candidate id of the instance; None means
    suppressed.  ``clusters`` are disjoint tuples of labeled candidate ids in
    canonical order (members ascending, clusters by smallest member).
    Transitivity of the pairwise same-person relation holds by construction
    of the partition representation.
    """

    label: dict[int, int | None]
    clusters: tuple[tuple[int, ...], ...]
    objective_value: float


def make_solution(
    label: dict[int, int | None],
    clusters,
    objective_value: float,
) -> Solution:
    """Build a Solution with canonically ordered clusters."""
    canon = tuple(
        sorted((tuple(sorted(c)) for c in clusters if len(c) > 0), key=lambda c: c[0])
    )
    return Solution(dict(label), canon, float(objective_value))


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint violations found in a solution; empty means feasible."""

    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_vec2(value, what: str) -> Vec2:
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise ValidationError(f"{what}: expected a 2-vector, got {value!r}")
    x, y = float(value[0]), float(value[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"{what}: non-finite component in {value!r}")
    return (x, y)


def validate_instance(instance: ProblemInstance) -> None:
    """Raise ValidationError on the first violated instance invariant."""
    ids = [pc.id for pc in instance.classes]
    if ids != list(range(len(ids))):
        raise ValidationError(f"class ids must be dense 0..{len(ids) - 1}, got {ids}")
    names = [pc.name for pc in instance.classes]
    if len(set(names)) != len(names):
        raise ValidationError("class names must be unique")
    if any(not n for n in names):
        raise ValidationError("class names must be non-empty")
    if not (isinstance(instance.scale, (int, float)) and instance.scale > 0):
        raise ValidationError(f"scale must be > 0, got {instance.scale}")
    n_classes = instance.n_classes

    cand_ids = [c.id for c in instance.candidates]
    if cand_ids != list(range(len(cand_ids))):
        raise ValidationError("candidate ids must be dense 0..|D|-1 and unique")

    all_pairs = {(a, b) for a in range(n_classes) for b in range(n_classes) if a != b}
    for cand in instance.candidates:
        _check_vec2(cand.location, f"candidate {cand.id} location")
        for cid, p in cand.unary.items():
            if cid not in range(n_classes):
                raise ValidationError(f"candidate {cand.id}: unary for unknown class {cid}")
            if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
                raise ValidationError(
                    f"candidate {cand.id}: unary for class "
                    f"{instance.class_name(cid)} is {p}, outside [0, 1]"
                )
        for cid, off in cand.refine_offset.items():
            if cid not in range(n_classes):
                raise ValidationError(f"candidate {cand.id}: refine offset for unknown class {cid}")
            _check_vec2(off, f"candidate {cand.id} refine offset for class {cid}")
        if n_classes > 1:
            missing = all_pairs - set(cand.pair_offset)
            if missing:
                a, b = min(missing)
                raise ValidationError(
                    f"candidate {cand.id}: pair offset map is not dense, missing "
                    f"{instance.class_name(a)}->{instance.class_name(b)}"
                )
        for (a, b), off in cand.pair_offset.items():
            if a not in range(n_classes) or b not in range(n_classes) or a == b:
                raise ValidationError(f"candidate {cand.id}: invalid pair offset key ({a}, {b})")
            _check_vec2(off, f"candidate {cand.id} pair offset {a}->{b}")
        if cand.fixed_class is not None and cand.fixed_class not in range(n_classes):
            raise ValidationError(f"candidate {cand.id}: fixed_class {cand.fixed_class} unknown")
        if cand.allowed_classes is not None:
            if not cand.allowed_classes:
                raise ValidationError(f"candidate {cand.id}: empty class restriction")
            if not cand.allowed_classes <= set(range(n_classes)):
                raise ValidationError(f"candidate {cand.id}: restriction names unknown classes")

    for pose in instance.ground_truth or ():
        if not pose.joints:
            raise ValidationError(f"ground-truth pose {pose.person_id}: no joints")
        if not (isinstance(pose.head_size, (int, float)) and pose.head_size > 0):
            raise ValidationError(f"ground-truth pose {pose.person_id}: head_size must be > 0")
        for cid, loc in pose.joints.items():
            if cid not in range(n_classes):
                raise ValidationError(f"ground-truth pose {pose.person_id}: unknown class {cid}")
            _check_vec2(loc, f"ground-truth pose {pose.person_id} joint {cid}")


def validate_solution(instance: ProblemInstance, solution: Solution) -> FeasibilityReport:
    """Report every constraint the solution violates (empty report = feasible)."""
    violations: list[str] = []
    n = len(instance.candidates)
    n_classes = instance.n_classes

    known = set(range(n))
    for cid in solution.label:
        if cid not in known:
            violations.append(f"label refers to unknown candidate {cid}")
    for cid, lab in solution.label.items():
        if lab is not None and lab not in range(n_classes):
            violations.append(f"candidate {cid} labeled with unknown class {lab}")

    seen: set[int] = set()
    for cluster in solution.clusters:
        for cid in cluster:
            if cid in seen:
                violations.append(f"candidate {cid} appears in more than one cluster")
            seen.add(cid)
            if cid not in known:
                violations.append(f"cluster refers to unknown candidate {cid}")
            elif solution.label.get(cid) is None:
                violations.append(f"suppressed candidate {cid} listed in a cluster")

    labeled = {cid for cid, lab in solution.label.items() if lab is not None and cid in known}
    for cid in sorted(labeled - seen):
        violations.append(f"labeled candidate {cid} belongs to no cluster")

    for cand in instance.candidates:
        lab = solution.label.get(cand.id)
        if cand.fixed_class is not None:
            if lab is None:
                violations.append(f"fixed-class candidate {cand.id} is suppressed")
            elif lab != cand.fixed_class:
                violations.append(
                    f"fixed-class candidate {cand.id} labeled {lab}, "
                    f"contradicting fixed class {cand.fixed_class}"
                )
        elif cand.allowed_classes is not None and lab is not None:
            if lab not in cand.allowed_classes:
                violations.append(
                    f"candidate {cand.id} labeled {lab}, outside its restriction"
                )

    return FeasibilityReport(tuple(violations))


# ---------------------------------------------------------------------------
# Instance file IO
# ---------------------------------------------------------------------------

_CAND_KEYS = {"id", "loc", "unary", "refine", "pair"}
_CAND_OPT_KEYS = {"restricted", "fixed"}


def _require_keys(obj: dict, required: set[str], optional: set[str], what: str) -> None:
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{what}: missing field {sorted(missing)[0]!r}")
    unknown = set(obj) - required - optional
    if unknown:
        raise SchemaError(f"{what}: unknown key {sorted(unknown)[0]!r}")


def _class_map(doc_classes) -> dict[str, int]:
    by_name: dict[str, int] = {}
    for entry in doc_classes:
        if not isinstance(entry, dict):
            raise SchemaError("classes: entries must be objects")
        _require_keys(entry, {"id", "name"}, set(), "classes entry")
        by_name[str(entry["name"])] = int(entry["id"])
    return by_name


def load_instance(data: bytes | str) -> ProblemInstance:
    """Parse and validate an instance document."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level: expected an object")
    _require_keys(doc, {"classes", "scale", "candidates"}, {"ground_truth"}, "top level")

    if not isinstance(doc["classes"], list):
        raise SchemaError("classes: expected an array")
    by_name = _class_map(doc["classes"])
    classes = tuple(
        PartClass(id=int(e["id"]), name=str(e["name"])) for e in doc["classes"]
    )
    n_classes = len(classes)

    if not isinstance(doc["candidates"], list):
        raise SchemaError("candidates: expected an array")

    def cid_of(name, what: str) -> int:
        if name not in by_name:
            raise SchemaError(f"{what}: unknown class name {name!r}")
        return by_name[name]

    candidates = []
    for entry in doc["candidates"]:
        if not isinstance(entry, dict):
            raise SchemaError("candidates: entries must be objects")
        _require_keys(entry, _CAND_KEYS, _CAND_OPT_KEYS, "candidate entry")
        cand_id = int(entry["id"])
        what = f"candidate {cand_id}"
        unary = {cid_of(k, what): float(v) for k, v in dict(entry["unary"]).items()}
        refine = {
            cid_of(k, what): (float(v[0]), float(v[1]))
            for k, v in dict(entry["refine"]).items()
        }
        pair: dict[tuple[int, int], Vec2] = {}
        for key, off in dict(entry["pair"]).items():
            parts = str(key).split("->")
            if len(parts) != 2:
                raise SchemaError(f"{what}: malformed pair key {key!r}")
            pair[(cid_of(parts[0], what), cid_of(parts[1], what))] = (
                float(off[0]),
                float(off[1]),
            )
        allowed = None
        if "restricted" in entry:
            allowed = frozenset({cid_of(entry["restricted"], what)})
        fixed = cid_of(entry["fixed"], what) if "fixed" in entry else None
        candidates.append(
            Candidate(
                id=cand_id,
                location=_check_vec2(entry["loc"], f"{what} location"),
                unary=unary,
                refine_offset=refine,
                pair_offset=pair,
                allowed_classes=allowed,
                fixed_class=fixed,
            )
        )

    ground_truth = None
    if "ground_truth" in doc:
        if not isinstance(doc["ground_truth"], list):
            raise SchemaError("ground_truth: expected an array")
        poses = []
        for entry in doc["ground_truth"]:
            _require_keys(entry, {"person_id", "head_size", "joints"}, set(), "ground_truth entry")
            what = f"ground_truth person {entry['person_id']}"
            joints = {
                cid_of(k, what): (float(v[0]), float(v[1]))
                for k, v in dict(entry["joints"]).items()
            }
            poses.append(
                GroundTruthPose(
                    person_id=int(entry["person_id"]),
                    head_size=float(entry["head_size"]),
                    joints=joints,
                )
            )
        ground_truth = tuple(poses)

    if not isinstance(doc["scale"], (int, float)) or isinstance(doc["scale"], bool):
        raise SchemaError("scale: expected a number")

    instance = ProblemInstance(
        classes=classes,
        candidates=tuple(candidates),
        scale=float(doc["scale"]),
        ground_truth=ground_truth,
    )
    validate_instance(instance)
    return instance


def _num(x: float):
    # JSON has no int/float distinction we care about; keep floats as floats
    # so round-trips are byte-stable.
    return float(x)


def save_instance(instance: ProblemInstance) -> bytes:
    """Serialize an instance to canonical JSON bytes."""
    validate_instance(instance)
    names = [pc.name for pc in instance.classes]
    doc: dict = {
        "classes": [{"id": pc.id, "name": pc.name} for pc in instance.classes],
        "scale": _num(instance.scale),
    }
    cands = []
    for cand in instance.candidates:
        entry: dict = {
            "id": cand.id,
            "loc": [_num(cand.location[0]), _num(cand.location[1])],
            "unary": {names[c]: _num(p) for c, p in sorted(cand.unary.items())},
            "refine": {
                names[c]: [_num(v[0]), _num(v[1])]
                for c, v in sorted(cand.refine_offset.items())
            },
            "pair": {
                f"{names[a]}->{names[b]}": [_num(v[0]), _num(v[1])]
                for (a, b), v in sorted(cand.pair_offset.items())
            },
        }
        if cand.fixed_class is not None:
            entry["fixed"] = names[cand.fixed_class]
        elif cand.allowed_classes is not None:
            if len(cand.allowed_classes) != 1:
                raise ValidationError(
                    f"candidate {cand.id}: multi-class restrictions are not serializable"
                )
            entry["restricted"] = names[next(iter(cand.allowed_classes))]
        cands.append(entry)
    doc["candidates"] = cands
    if instance.ground_truth is not None:
        doc["ground_truth"] = [
            {
                "person_id": pose.person_id,
                "head_size": _num(pose.head_size),
                "joints": {
                    names[c]: [_num(v[0]), _num(v[1])] for c, v in sorted(pose.joints.items())
                },
            }
            for pose in instance.ground_truth
        ]
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Solution file IO
# ---------------------------------------------------------------------------


def save_solution(solution: Solution, instance: ProblemInstance) -> bytes:
    """Serialize a solution; class labels are written by name, null = suppressed."""
    names = [pc.name for pc in instance.classes]
    doc = {
        "label": {
            str(cid): (names[lab] if lab is not None else None)
            for cid, lab in sorted(solution.label.items())
        },
        "clusters": [list(c) for c in solution.clusters],
        "objective": _num(solution.objective_value),
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def load_solution(data: bytes | str, instance: ProblemInstance) -> Solution:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    _require_keys(doc, {"label", "clusters", "objective"}, set(), "solution")
    label: dict[int, int | None] = {}
    for key, val in doc["label"].items():
        label[int(key)] = None if val is None else instance.class_id(str(val))
    clusters = tuple(tuple(int(i) for i in c) for c in doc["clusters"])
    return make_solution(label, clusters, float(doc["objective"]))


def renumber(candidates) -> tuple[Candidate, ...]:
    """Reassign dense ids 0..n-1 preserving order."""
    return tuple(replace(c, id=i) for i, c in enumerate(candidates))
