"""Synthetic instance generation and pairwise scoremap rendering.

The generator plants persons in a square frame, derives detection
candidates from the true joints plus uniform clutter, and fills in the
unary probabilities, refinement offsets, and pairwise regression payloads a
detector stack would produce.  All randomness flows from one seed through a
fixed consumption order, so a given parameter set always yields the
byte-identical instance file.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoAnchorJoints, ValidationError
from .model import Candidate, GroundTruthPose, PartClass, ProblemInstance
from .pairwise import PairwiseModel, feature_block, probabilities_from_features
from .seeding import spawn_rng

__all__ = [
    "SynthParams",
    "default_skeleton",
    "generate",
    "ScoremapRaster",
    "render_pairwise_scoremap",
    "write_pgm",
    "skeleton_svg",
]

# 14-part skeleton, offsets in pixels from the pelvis root (y grows down),
# sized so a standing person is roughly 340 px tall.
_DEFAULT_SKELETON: tuple[tuple[str, tuple[float, float]], ...] = (
    ("r_ankle", (-22.0, 152.0)),
    ("r_knee", (-20.0, 78.0)),
    ("r_hip", (-18.0, 0.0)),
    ("l_hip", (18.0, 0.0)),
    ("l_knee", (20.0, 78.0)),
    ("l_ankle", (22.0, 152.0)),
    ("r_wrist", (-56.0, -2.0)),
    ("r_elbow", (-52.0, -48.0)),
    ("r_shoulder", (-38.0, -96.0)),
    ("l_shoulder", (38.0, -96.0)),
    ("l_elbow", (52.0, -48.0)),
    ("l_wrist", (56.0, -2.0)),
    ("chin", (0.0, -132.0)),
    ("top_head", (0.0, -170.0)),
)

_SKELETON_EDGES = (
    ("top_head", "chin"),
    ("chin", "r_shoulder"),
    ("chin", "l_shoulder"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
    ("l_shoulder", "l_elbow"),
    ("l_elbow", "l_wrist"),
    ("r_shoulder", "r_hip"),
    ("l_shoulder", "l_hip"),
    ("r_hip", "r_knee"),
    ("r_knee", "r_ankle"),
    ("l_hip", "l_knee"),
    ("l_knee", "l_ankle"),
    ("r_hip", "l_hip"),
)


def default_skeleton() -> tuple[tuple[str, tuple[float, float]], ...]:
    return _DEFAULT_SKELETON


@dataclass(frozen=True)
class SynthParams:
    """Scene difficulty knobs for the generator."""

    persons: int = 3
    skeleton: tuple[tuple[str, tuple[float, float]], ...] = _DEFAULT_SKELETON
    jitter_sigma: float = 0.0
    clutter_rate: float = 0.0
    unary_sharpness: float = 18.0
    offset_noise_sigma: float = 0.0
    seed: int = 0
    frame: float = 512.0

    def __post_init__(self) -> None:
        if self.persons < 0:
            raise ValueError("persons must be >= 0")
        for name, value in (
            ("jitter_sigma", self.jitter_sigma),
            ("clutter_rate", self.clutter_rate),
            ("unary_sharpness", self.unary_sharpness),
            ("offset_noise_sigma", self.offset_noise_sigma),
        ):
            if value < 0:
                raise ValueError(f"{name} must be >= 0")


def _head_segment(skeleton) -> float:
    offsets = dict(skeleton)
    if "top_head" in offsets and "chin" in offsets:
        return max(math.dist(offsets["top_head"], offsets["chin"]), 1e-3)
    # fall back to the largest skeleton extent
    pts = np.array([off for _, off in skeleton], dtype=np.float64)
    span = float(np.ptp(pts, axis=0).max()) if len(pts) else 1.0
    return max(span / 8.0, 1e-3)


def generate(params: SynthParams) -> ProblemInstance:
    """Sample a scene and emit the instance a detector stack would produce.

    Unary probabilities decay with the squared distance to the nearest true
    joint of each class; refinement offsets point at that joint; pairwise
    offsets point at the owning person's joints, perturbed by Gaussian
    noise.  Clutter candidates adopt the person owning their nearest true
    joint.
    """
    rng = spawn_rng(params.seed)
    classes = tuple(
        PartClass(id=i, name=name) for i, (name, _) in enumerate(params.skeleton)
    )
    n_classes = len(classes)
    offsets = np.array([off for _, off in params.skeleton], dtype=np.float64)
    scale = _head_segment(params.skeleton)

    roots = rng.uniform(0.0, params.frame, size=(params.persons, 2))
    joints = np.empty((params.persons, n_classes, 2), dtype=np.float64)
    for p in range(params.persons):
        jitter = rng.normal(0.0, params.jitter_sigma, size=(n_classes, 2))
        joints[p] = roots[p][None, :] + offsets + jitter

    poses = []
    chin = next((i for i, (n, _) in enumerate(params.skeleton) if n == "chin"), None)
    top = next((i for i, (n, _) in enumerate(params.skeleton) if n == "top_head"), None)
    for p in range(params.persons):
        if chin is not None and top is not None:
            head = max(float(np.linalg.norm(joints[p, top] - joints[p, chin])), 1e-3)
        else:
            head = scale
        poses.append(
            GroundTruthPose(
                person_id=p,
                head_size=head,
                joints={c: (float(joints[p, c, 0]), float(joints[p, c, 1])) for c in range(n_classes)},
            )
        )

    # candidate locations: one per true joint, then Poisson clutter per class
    cand_locs: list[np.ndarray] = []
    owners: list[int] = []
    for p in range(params.persons):
        noise = rng.normal(0.0, params.jitter_sigma, size=(n_classes, 2))
        for c in range(n_classes):
            cand_locs.append(joints[p, c] + noise[c])
            owners.append(p)
    for _c in range(n_classes):
        count = int(rng.poisson(params.clutter_rate))
        for _ in range(count):
            loc = rng.uniform(0.0, params.frame, size=2)
            cand_locs.append(loc)
            owners.append(-1)

    candidates = []
    flat_joints = joints.reshape(-1, 2) if params.persons else np.zeros((0, 2))
    for idx, loc in enumerate(cand_locs):
        unary: dict[int, float] = {}
        refine: dict[int, tuple[float, float]] = {}
        if params.persons:
            dists = np.linalg.norm(joints[:, :, :] - loc[None, None, :], axis=2)
            nearest_per_class = dists.argmin(axis=0)
            for c in range(n_classes):
                d = float(dists[nearest_per_class[c], c])
                if params.unary_sharpness > 0:
                    u = math.exp(-(d * d) / (2.0 * params.unary_sharpness**2))
                else:
                    u = 1.0 if d == 0.0 else 0.0
                unary[c] = min(max(u, 0.0), 1.0)
                target = joints[nearest_per_class[c], c]
                refine[c] = (float(target[0] - loc[0]), float(target[1] - loc[1]))
            owner = owners[idx]
            if owner < 0:
                owner = int(np.unravel_index(dists.argmin(), dists.shape)[0])
        else:
            unary = {c: 0.0 for c in range(n_classes)}
            refine = {c: (0.0, 0.0) for c in range(n_classes)}
            owner = -1
        pair: dict[tuple[int, int], tuple[float, float]] = {}
        for c in range(n_classes):
            for c_prime in range(n_classes):
                if c == c_prime:
                    continue
                noise = rng.normal(0.0, params.offset_noise_sigma, size=2)
                if owner >= 0:
                    vec = joints[owner, c_prime] - loc + noise
                else:
                    vec = noise
                pair[(c, c_prime)] = (float(vec[0]), float(vec[1]))
        candidates.append(
            Candidate(
                id=idx,
                location=(float(loc[0]), float(loc[1])),
                unary=unary,
                refine_offset=refine,
                pair_offset=pair,
            )
        )

    return ProblemInstance(
        classes=classes,
        candidates=tuple(candidates),
        scale=scale,
        ground_truth=tuple(poses),
    )


# ---------------------------------------------------------------------------
# Pairwise scoremap rendering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoremapRaster:
    """Grayscale probability raster on a regular grid.

    ``values[r, c]`` covers the point (origin_x + c*step, origin_y + r*step).
    """

    values: np.ndarray
    origin: tuple[float, float]
    step: float
    per_source: dict[int, np.ndarray] | None = None


def render_pairwise_scoremap(
    instance: ProblemInstance,
    model: PairwiseModel,
    target: int,
    anchor_pose: GroundTruthPose,
    grid_step: float = 8.0,
    per_source: bool = False,
) -> ScoremapRaster:
    """Combined same-person probability for the target class over the frame.

    Every annotated source joint of the anchor pose votes with its pairwise
    probability against each grid point, and the votes are combined by
    multiplication.  Grid points are treated as noiseless detections of the
    anchor person, so their synthesized back-offsets point at the source
    joints exactly; the shape of the map therefore comes from the forward
    agreement between the source's regression and the actual displacement.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be > 0")
    sources = sorted(c for c in anchor_pose.joints if c != target)
    if not sources:
        raise NoAnchorJoints("anchor pose has no annotated joint besides the target")
    if target not in anchor_pose.joints:
        raise NoAnchorJoints(
            "anchor pose must annotate the target joint to synthesize regressions"
        )
    model.check_roster(instance.classes)

    pts = [c.location for c in instance.candidates]
    pts += [anchor_pose.joints[c] for c in anchor_pose.joints]
    arr = np.array(pts, dtype=np.float64)
    pad = instance.scale
    x0, y0 = np.floor(arr.min(axis=0) - pad)
    x1, y1 = np.ceil(arr.max(axis=0) + pad)
    nx = int(math.ceil((x1 - x0) / grid_step)) + 1
    ny = int(math.ceil((y1 - y0) / grid_step)) + 1
    gx, gy = np.meshgrid(
        x0 + grid_step * np.arange(nx), y0 + grid_step * np.arange(ny)
    )
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)

    target_joint = np.asarray(anchor_pose.joints[target], dtype=np.float64)
    combined = np.ones(len(grid), dtype=np.float64)
    sources_out: dict[int, np.ndarray] = {}
    for src in sources:
        src_loc = np.asarray(anchor_pose.joints[src], dtype=np.float64)
        fwd = (target_joint - src_loc)[None, :]
        back = src_loc[None, :] - grid
        if src < target:
            feats, _ = feature_block(
                src_loc[None, :], fwd, grid, back, instance.scale
            )
            vals = probabilities_from_features(
                feats, model.weight_vector(src, target), model.mode
            )[0]
        else:
            feats, _ = feature_block(
                grid, back, src_loc[None, :], fwd, instance.scale
            )
            vals = probabilities_from_features(
                feats, model.weight_vector(target, src), model.mode
            )[:, 0]
        combined *= vals
        if per_source:
            sources_out[src] = vals.reshape(ny, nx)

    return ScoremapRaster(
        values=combined.reshape(ny, nx),
        origin=(float(x0), float(y0)),
        step=float(grid_step),
        per_source=sources_out if per_source else None,
    )


def write_pgm(values: np.ndarray) -> bytes:
    """Binary PGM (P5), probabilities scaled to 0..255."""
    arr = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii")
    return header + data.tobytes()


def skeleton_svg(instance: ProblemInstance) -> str:
    """SVG overlay of the ground-truth skeletons, for eyeballing scenes."""
    if not instance.ground_truth:
        raise ValidationError("instance has no ground truth to draw")
    by_name = {pc.name: pc.id for pc in instance.classes}
    pts = np.array(
        [loc for pose in instance.ground_truth for loc in pose.joints.values()]
    )
    pad = instance.scale
    x0, y0 = np.floor(pts.min(axis=0) - pad)
    x1, y1 = np.ceil(pts.max(axis=0) + pad)
    width, height = x1 - x0, y1 - y0
    palette = ("#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00", "#a65628")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0} {y0} {width} {height}" '
        f'width="{width:.0f}" height="{height:.0f}">',
        f'<rect x="{x0}" y="{y0}" width="{width}" height="{height}" fill="white"/>',
    ]
    for pose in instance.ground_truth:
        color = palette[pose.person_id % len(palette)]
        for a, b in _SKELETON_EDGES:
            ca, cb = by_name.get(a), by_name.get(b)
            if ca in pose.joints and cb in pose.joints:
                (xa, ya), (xb, yb) = pose.joints[ca], pose.joints[cb]
                parts.append(
                    f'<line x1="{xa:.1f}" y1="{ya:.1f}" x2="{xb:.1f}" y2="{yb:.1f}" '
                    f'stroke="{color}" stroke-width="2"/>'
                )
        for loc in pose.joints.values():
            parts.append(
                f'<circle cx="{loc[0]:.1f}" cy="{loc[1]:.1f}" r="3" fill="{color}"/>'
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
