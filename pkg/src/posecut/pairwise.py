"""Image-conditioned pairwise features, logistic scoring, and ML training.

For a candidate pair (d, d') considered as classes (c, c'), the observed
offset between the two locations is compared against the offsets each
candidate regressed toward the other class, in both directions:

    o_hat      = loc(d') - loc(d)
    delta_f    = ||o_hat - off(d, c->c')|| / scale
    theta_f    = |angle(o_hat, off(d, c->c'))|
    delta_b    = ||-o_hat - off(d', c'->c)|| / scale
    theta_b    = |angle(-o_hat, off(d', c'->c))|

The feature vector augments these with exponential terms and a bias:
(delta_f, theta_f, delta_b, theta_b, exp(-delta_f), exp(-theta_f),
exp(-delta_b), exp(-theta_b), 1).  A logistic model with one weight vector
per unordered class pair maps a feature vector to the probability that the
two candidates carry those classes and belong to the same person.

One weight vector is stored per unordered class pair, c = c' included, so a
roster of |C| classes has |C|(|C|+1)/2 vectors.  Features for an unordered
pair are always computed with the lower class id as the forward source,
which makes scoring deterministic and symmetric.  Same-class pairs use a
distance-only feature (both deltas equal the normalized location distance,
angles zero).
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MissingOffset,
    MissingWeights,
    NoGroundTruth,
    ParseError,
    SchemaError,
    ValidationError,
)
from .model import Candidate, PartClass, ProblemInstance

__all__ = [
    "FeatureMode",
    "PairFeatures",
    "PairwiseModel",
    "TrainingSet",
    "FitInfo",
    "compute_features",
    "compute_features_same_class",
    "pairwise_probability",
    "pair_probability",
    "build_training_set",
    "fit_logistic",
    "penalized_loglik",
    "penalized_loglik_grad",
    "save_model",
    "load_model",
]

FEATURE_DIM = 9
_DEGENERATE_NORM = 1e-9
_PROB_FLOOR = 1e-15


class FeatureMode(enum.Enum):
    """Which feature components the logistic model consumes."""

    FULL = "full"
    UNI = "uni"
    NO_ANGLE = "no_angle"

    @property
    def columns(self) -> tuple[int, ...]:
        if self is FeatureMode.FULL:
            return (0, 1, 2, 3, 4, 5, 6, 7, 8)
        if self is FeatureMode.UNI:
            # forward direction only, with its angle
            return (0, 1, 4, 5, 8)
        # bi-directional distances, no angles
        return (0, 2, 4, 6, 8)

    @property
    def dim(self) -> int:
        return len(self.columns)


@dataclass(frozen=True)
class PairFeatures:
    """Feature tuple for one ordered candidate/class pairing.

    ``degenerate`` flags that at least one compared vector had near-zero
    norm, in which case the corresponding angle is defined as 0.
    """

    delta_f: float
    theta_f: float
    delta_b: float
    theta_b: float
    augmented: tuple[float, ...]
    degenerate: bool = False


@dataclass(frozen=True)
class PairwiseModel:
    """Logistic weights per unordered class pair.

    ``weights`` maps (c, c') with c <= c' to a vector of ``mode.dim``
    components.  ``degenerate_pairs`` lists pairs whose training data was
    one-sided; their weights are zero and their probability is 0.5.
    """

    weights: dict[tuple[int, int], np.ndarray]
    classes: tuple[str, ...]
    mode: FeatureMode = FeatureMode.FULL
    trained_on: str = ""
    degenerate_pairs: frozenset[tuple[int, int]] = frozenset()

    def weight_vector(self, c: int, c_prime: int) -> np.ndarray:
        key = (min(c, c_prime), max(c, c_prime))
        try:
            return self.weights[key]
        except KeyError:
            raise MissingWeights(f"no weights for class pair {key}") from None

    def check_roster(self, classes: tuple[PartClass, ...]) -> None:
        names = tuple(pc.name for pc in classes)
        if names != self.classes:
            raise ValidationError(
                "model class roster does not match the instance "
                f"(model {self.classes}, instance {names})"
            )


# ---------------------------------------------------------------------------
# Feature computation
# ---------------------------------------------------------------------------


def _stable_sigmoid(s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s, dtype=np.float64)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    es = np.exp(s[~pos])
    out[~pos] = es / (1.0 + es)
    return out


def _angles(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Absolute angle between 2-vector arrays, with zero-norm pairs flagged.

    Returns (theta in [0, pi], degenerate mask).  A near-zero vector on
    either side defines the angle as 0.
    """
    nu = np.hypot(u[..., 0], u[..., 1])
    nv = np.hypot(v[..., 0], v[..., 1])
    degenerate = (nu < _DEGENERATE_NORM) | (nv < _DEGENERATE_NORM)
    dot = u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]
    denom = np.where(degenerate, 1.0, nu * nv)
    cos = np.clip(dot / denom, -1.0, 1.0)
    theta = np.where(degenerate, 0.0, np.arccos(cos))
    return theta, degenerate


def feature_block(
    loc_a: np.ndarray,
    off_fwd: np.ndarray,
    loc_b: np.ndarray,
    off_bwd: np.ndarray,
    scale: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Feature grids for every (source, target) pairing of two sets.

    ``loc_a`` (m, 2) are source locations with ``off_fwd`` (m, 2) offsets
    regressed from the source class toward the target class;  ``loc_b``
    (g, 2) are target locations with ``off_bwd`` (g, 2) offsets regressed
    back toward the source class.  Returns (features (m, g, 9), degenerate
    mask (m, g)).
    """
    ohat = loc_b[None, :, :] - loc_a[:, None, :]
    diff_f = ohat - off_fwd[:, None, :]
    delta_f = np.hypot(diff_f[..., 0], diff_f[..., 1]) / scale
    theta_f, deg_f = _angles(ohat, np.broadcast_to(off_fwd[:, None, :], ohat.shape))
    back = -ohat
    diff_b = back - off_bwd[None, :, :]
    delta_b = np.hypot(diff_b[..., 0], diff_b[..., 1]) / scale
    theta_b, deg_b = _angles(back, np.broadcast_to(off_bwd[None, :, :], back.shape))

    feats = np.empty(ohat.shape[:2] + (FEATURE_DIM,), dtype=np.float64)
    feats[..., 0] = delta_f
    feats[..., 1] = theta_f
    feats[..., 2] = delta_b
    feats[..., 3] = theta_b
    feats[..., 4] = np.exp(-delta_f)
    feats[..., 5] = np.exp(-theta_f)
    feats[..., 6] = np.exp(-delta_b)
    feats[..., 7] = np.exp(-theta_b)
    feats[..., 8] = 1.0
    return feats, deg_f | deg_b


def same_class_feature_block(
    loc_a: np.ndarray, loc_b: np.ndarray, scale: float
) -> np.ndarray:
    """Distance-only feature grids for same-class pairings (m, g, 9)."""
    diff = loc_b[None, :, :] - loc_a[:, None, :]
    delta = np.hypot(diff[..., 0], diff[..., 1]) / scale
    feats = np.empty(diff.shape[:2] + (FEATURE_DIM,), dtype=np.float64)
    feats[..., 0] = delta
    feats[..., 1] = 0.0
    feats[..., 2] = delta
    feats[..., 3] = 0.0
    feats[..., 4] = np.exp(-delta)
    feats[..., 5] = 1.0
    feats[..., 6] = np.exp(-delta)
    feats[..., 7] = 1.0
    feats[..., 8] = 1.0
    return feats


def _pair_off(cand: Candidate, c: int, c_prime: int) -> np.ndarray:
    try:
        return np.asarray(cand.pair_offset[(c, c_prime)], dtype=np.float64)
    except KeyError:
        raise MissingOffset(
            f"candidate {cand.id}: no pair offset for ({c}, {c_prime})"
        ) from None


def compute_features(
    d: Candidate, d_prime: Candidate, c: int, c_prime: int, scale: float
) -> PairFeatures:
    """Features for the ordered pairing (d as class c, d' as class c')."""
    if c == c_prime:
        raise ValueError("use compute_features_same_class for c == c'")
    feats, deg = feature_block(
        np.asarray([d.location], dtype=np.float64),
        _pair_off(d, c, c_prime)[None, :],
        np.asarray([d_prime.location], dtype=np.float64),
        _pair_off(d_prime, c_prime, c)[None, :],
        scale,
    )
    vec = feats[0, 0]
    return PairFeatures(
        delta_f=float(vec[0]),
        theta_f=float(vec[1]),
        delta_b=float(vec[2]),
        theta_b=float(vec[3]),
        augmented=tuple(float(v) for v in vec),
        degenerate=bool(deg[0, 0]),
    )


def compute_features_same_class(
    d: Candidate, d_prime: Candidate, c: int, scale: float
) -> PairFeatures:
    """Distance-only features for two candidates sharing one class."""
    if d.id == d_prime.id:
        raise ValueError("same-class features need two distinct candidates")
    feats = same_class_feature_block(
        np.asarray([d.location], dtype=np.float64),
        np.asarray([d_prime.location], dtype=np.float64),
        scale,
    )
    vec = feats[0, 0]
    return PairFeatures(
        delta_f=float(vec[0]),
        theta_f=0.0,
        delta_b=float(vec[2]),
        theta_b=0.0,
        augmented=tuple(float(v) for v in vec),
    )


def scores_from_features(feats: np.ndarray, weights: np.ndarray, mode: FeatureMode) -> np.ndarray:
    """Inner products <w, f> over the mode's feature columns.

    Accumulated component by component in a fixed order so results are
    bit-identical regardless of the batch shape.
    """
    cols = mode.columns
    out = np.zeros(feats.shape[:-1], dtype=np.float64)
    for k, col in enumerate(cols):
        out += weights[k] * feats[..., col]
    return out


def probabilities_from_features(
    feats: np.ndarray, weights: np.ndarray, mode: FeatureMode
) -> np.ndarray:
    """Logistic probabilities clipped to the open interval (0, 1)."""
    p = _stable_sigmoid(scores_from_features(feats, weights, mode))
    return np.clip(p, _PROB_FLOOR, 1.0 - _PROB_FLOOR)


def pairwise_probability(
    f: PairFeatures, model: PairwiseModel, c: int, c_prime: int
) -> float:
    """Probability that the featured pairing is a same-person match."""
    w = model.weight_vector(c, c_prime)
    feats = np.asarray(f.augmented, dtype=np.float64)
    return float(probabilities_from_features(feats, w, model.mode))


def pair_probability(
    d: Candidate,
    d_prime: Candidate,
    c: int,
    c_prime: int,
    model: PairwiseModel,
    scale: float,
) -> float:
    """Same-person probability with the canonical pair orientation.

    For an unordered class pair the forward direction always starts from the
    lower class id, so exchanging (d, c) with (d', c') returns the identical
    value.
    """
    if c == c_prime:
        f = compute_features_same_class(d, d_prime, c, scale)
    elif c < c_prime:
        f = compute_features(d, d_prime, c, c_prime, scale)
    else:
        f = compute_features(d_prime, d, c_prime, c, scale)
    return pairwise_probability(f, model, c, c_prime)


# ---------------------------------------------------------------------------
# Training set construction
# ---------------------------------------------------------------------------


@dataclass
class TrainingSet:
    """Per class pair: full 9-column feature rows and 0/1 labels."""

    features: dict[tuple[int, int], np.ndarray]
    labels: dict[tuple[int, int], np.ndarray]
    classes: tuple[str, ...]
    n_instances: int = 0

    def data_hash(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.features):
            h.update(repr(key).encode())
            h.update(np.ascontiguousarray(self.features[key]).tobytes())
            h.update(np.ascontiguousarray(self.labels[key]).tobytes())
        return h.hexdigest()[:16]


def _match_masks(
    instance: ProblemInstance, tau_match: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per (candidate, class): bitmask of persons matched within tau, and
    whether the candidate is far (beyond 2 tau) from every annotated joint
    of the class."""
    poses = instance.ground_truth or ()
    if len(poses) > 63:
        raise ValidationError("training supports at most 63 annotated persons")
    n = len(instance.candidates)
    n_classes = instance.n_classes
    loc = np.array([c.location for c in instance.candidates], dtype=np.float64)
    match = np.zeros((n, n_classes), dtype=np.uint64)
    far = np.ones((n, n_classes), dtype=bool)
    for bit, pose in enumerate(poses):
        thr = tau_match * pose.head_size
        for cls, (gx, gy) in pose.joints.items():
            dist = np.hypot(loc[:, 0] - gx, loc[:, 1] - gy)
            match[:, cls] |= np.where(dist <= thr, np.uint64(1 << bit), np.uint64(0))
            far[:, cls] &= dist > 2.0 * thr
    return match, far


def build_training_set(
    instances, tau_match: float = 0.5
) -> TrainingSet:
    """Label candidate pairings against ground truth and attach features.

    A pairing (d as c, d' as c') is positive iff both candidates match the
    respective joints of the same person within ``tau_match`` times the
    person's head size.  It is negative if both match but only different
    persons, or if one matches and the other is beyond twice the threshold
    from every annotated joint of its class.  Everything else is ambiguous
    and discarded.
    """
    instances = list(instances)
    if not instances:
        raise NoGroundTruth("no training instances given")
    roster = tuple(pc.name for pc in instances[0].classes)
    feat_rows: dict[tuple[int, int], list[np.ndarray]] = {}
    label_rows: dict[tuple[int, int], list[np.ndarray]] = {}

    for instance in instances:
        if not instance.ground_truth:
            raise NoGroundTruth("training instance has no ground_truth")
        if tuple(pc.name for pc in instance.classes) != roster:
            raise ValidationError("training instances must share one class roster")
        n = len(instance.candidates)
        if n < 2:
            continue
        loc = np.array([c.location for c in instance.candidates], dtype=np.float64)
        match, far = _match_masks(instance, tau_match)

        def labels_for(c: int, c_prime: int) -> np.ndarray:
            # (n, n) in {1, 0, -1(discard)} for (d_i as c, d_j as c')
            mi = match[:, c][:, None]
            mj = match[:, c_prime][None, :]
            pos = (mi & mj) != 0
            hit_i = mi != 0
            hit_j = mj != 0
            neg = (
                (hit_i & hit_j & ~pos)
                | (hit_i & far[:, c_prime][None, :])
                | (hit_j & far[:, c][:, None])
            )
            return np.where(pos, 1, np.where(neg, 0, -1)).astype(np.int8)

        for c in range(instance.n_classes):
            for c_prime in range(c, instance.n_classes):
                key = (c, c_prime)
                lab = labels_for(c, c_prime)
                if c == c_prime:
                    feats = same_class_feature_block(loc, loc, instance.scale)
                    # unordered candidate pairs only
                    sel = np.triu(lab >= 0, k=1)
                else:
                    off_f = np.array(
                        [cand.pair_offset[(c, c_prime)] for cand in instance.candidates]
                    )
                    off_b = np.array(
                        [cand.pair_offset[(c_prime, c)] for cand in instance.candidates]
                    )
                    feats, _ = feature_block(loc, off_f, loc, off_b, instance.scale)
                    sel = lab >= 0
                    np.fill_diagonal(sel, False)
                if not sel.any():
                    continue
                feat_rows.setdefault(key, []).append(feats[sel])
                label_rows.setdefault(key, []).append(lab[sel].astype(np.float64))

    features = {k: np.concatenate(v, axis=0) for k, v in feat_rows.items()}
    labels = {k: np.concatenate(v, axis=0) for k, v in label_rows.items()}
    return TrainingSet(features, labels, roster, n_instances=len(instances))


# ---------------------------------------------------------------------------
# Maximum-likelihood fitting
# ---------------------------------------------------------------------------


def penalized_loglik(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean log-likelihood minus l2 * ||w||^2 (the quantity being maximized)."""
    s = X @ w
    ll = -(np.logaddexp(0.0, -s) * y + np.logaddexp(0.0, s) * (1.0 - y)).mean()
    return float(ll - l2 * float(w @ w))


def penalized_loglik_grad(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    s = X @ w
    return X.T @ (y - _stable_sigmoid(s)) / len(y) - 2.0 * l2 * w


@dataclass
class FitInfo:
    """Outcome of fitting one class pair."""

    loglik: float
    iterations: int
    degenerate: bool
    objective_trace: list[float] = field(default_factory=list)


def _fit_one(
    X: np.ndarray, y: np.ndarray, l2: float, max_iter: int, tol: float
) -> tuple[np.ndarray, FitInfo]:
    """Deterministic full-batch gradient ascent with backtracking line search."""
    dim = X.shape[1]
    w = np.zeros(dim, dtype=np.float64)
    if y.min() == y.max():
        info = FitInfo(loglik=penalized_loglik(w, X, y, l2), iterations=0, degenerate=True)
        return w, info

    obj = penalized_loglik(w, X, y, l2)
    trace = [obj]
    it = 0
    for it in range(1, max_iter + 1):
        g = penalized_loglik_grad(w, X, y, l2)
        gnorm = float(np.abs(g).max())
        if gnorm < tol:
            it -= 1
            break
        step = 1.0
        g_sq = float(g @ g)
        accepted = False
        for _ in range(60):
            cand = w + step * g
            cand_obj = penalized_loglik(cand, X, y, l2)
            if cand_obj >= obj + 1e-4 * step * g_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        w, obj = cand, cand_obj
        trace.append(obj)
    info = FitInfo(loglik=float(obj + l2 * float(w @ w)), iterations=it,
                   degenerate=False, objective_trace=trace)
    return w, info


def fit_logistic(
    samples: TrainingSet,
    l2: float = 1e-4,
    max_iter: int = 300,
    tol: float = 1e-6,
    mode: FeatureMode = FeatureMode.FULL,
) -> tuple[PairwiseModel, dict[tuple[int, int], FitInfo]]:
    """Fit one logistic model per class pair by regularized ML.

    Class pairs with one-sided or missing data get zero weights and are
    flagged as degenerate (their probability is a flat 0.5).  Returns the
    model and per-pair fit diagnostics including the final log-likelihood.
    """
    n_classes = len(samples.classes)
    weights: dict[tuple[int, int], np.ndarray] = {}
    infos: dict[tuple[int, int], FitInfo] = {}
    degenerate: set[tuple[int, int]] = set()
    cols = list(mode.columns)
    for c in range(n_classes):
        for c_prime in range(c, n_classes):
            key = (c, c_prime)
            if key not in samples.features or len(samples.features[key]) == 0:
                weights[key] = np.zeros(mode.dim, dtype=np.float64)
                infos[key] = FitInfo(loglik=float(np.log(0.5)), iterations=0, degenerate=True)
                degenerate.add(key)
                continue
            X = samples.features[key][:, cols]
            y = samples.labels[key]
            w, info = _fit_one(X, y, l2, max_iter, tol)
            weights[key] = w
            infos[key] = info
            if info.degenerate:
                degenerate.add(key)
    model = PairwiseModel(
        weights=weights,
        classes=samples.classes,
        mode=mode,
        trained_on=f"{samples.n_instances} instances, hash {samples.data_hash()}",
        degenerate_pairs=frozenset(degenerate),
    )
    return model, infos


# ---------------------------------------------------------------------------
# Model file IO
# ---------------------------------------------------------------------------


def save_model(model: PairwiseModel, l2: float | None = None,
               max_iter: int | None = None, tol: float | None = None) -> bytes:
    doc = {
        "classes": list(model.classes),
        "mode": model.mode.value,
        "trained_on": model.trained_on,
        "l2": l2,
        "max_iter": max_iter,
        "tol": tol,
        "degenerate": sorted(
            f"{model.classes[a]}|{model.classes[b]}" for a, b in model.degenerate_pairs
        ),
        "pairs": [
            {
                "class_pair": f"{model.classes[a]}|{model.classes[b]}",
                "weights": [float(v) for v in model.weights[(a, b)]],
            }
            for a, b in sorted(model.weights)
        ],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def load_model(data: bytes | str) -> PairwiseModel:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from exc
    for key in ("classes", "mode", "pairs"):
        if key not in doc:
            raise SchemaError(f"model: missing field {key!r}")
    classes = tuple(str(n) for n in doc["classes"])
    index = {n: i for i, n in enumerate(classes)}
    mode = FeatureMode(doc["mode"])
    weights: dict[tuple[int, int], np.ndarray] = {}
    for entry in doc["pairs"]:
        names = str(entry["class_pair"]).split("|")
        if len(names) != 2 or names[0] not in index or names[1] not in index:
            raise SchemaError(f"model: malformed class_pair {entry.get('class_pair')!r}")
        key = (index[names[0]], index[names[1]])
        w = np.asarray([float(v) for v in entry["weights"]], dtype=np.float64)
        if w.shape != (mode.dim,):
            raise SchemaError(
                f"model: pair {entry['class_pair']} has {w.shape[0]} weights, "
                f"expected {mode.dim}"
            )
        weights[key] = w
    expected = {(a, b) for a in range(len(classes)) for b in range(a, len(classes))}
    if set(weights) != expected:
        raise SchemaError("model: weight entries do not cover every class pair")
    degenerate = set()
    for name in doc.get("degenerate", []):
        a, b = str(name).split("|")
        degenerate.add((index[a], index[b]))
    return PairwiseModel(
        weights=weights,
        classes=classes,
        mode=mode,
        trained_on=str(doc.get("trained_on", "")),
        degenerate_pairs=frozenset(degenerate),
    )
