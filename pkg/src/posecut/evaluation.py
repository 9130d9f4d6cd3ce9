"""Pose assembly from solutions and average-precision scoring.

Predicted poses are matched to ground-truth poses greedily, highest-scoring
pose first, each taking the unassigned annotation with the most joints
within the distance threshold (a fraction of the person's head size).  Per
class, matched joints inside the threshold are true positives; everything
else a prediction offers is a false positive; unexplained annotations are
false negatives.  AP integrates the precision-recall curve over joint-score
thresholds with all-points interpolation, and mAP averages over the classes
that carry at least one annotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ProblemInstance, Solution

__all__ = ["PoseJoint", "Pose", "PoseSet", "ApReport", "assemble_poses", "evaluate_ap"]


@dataclass(frozen=True)
class PoseJoint:
    location: tuple[float, float]
    score: float


@dataclass(frozen=True)
class Pose:
    joints: dict[int, PoseJoint]

    def score(self) -> float:
        if not self.joints:
            return 0.0
        return float(np.mean([j.score for j in self.joints.values()]))


@dataclass(frozen=True)
class PoseSet:
    poses: tuple[Pose, ...]


@dataclass(frozen=True)
class ApReport:
    per_class: dict[int, float]
    mean_ap: float
    counts: dict[str, int]


def assemble_poses(instance: ProblemInstance, solution: Solution) -> PoseSet:
    """One pose per cluster; per class the joint sits at the unary-weighted
    mean of that class's members and scores their maximum unary."""
    poses = []
    for cluster in solution.clusters:
        by_class: dict[int, list[int]] = {}
        for cid in cluster:
            by_class.setdefault(solution.label[cid], []).append(cid)
        joints: dict[int, PoseJoint] = {}
        for cls, members in sorted(by_class.items()):
            weights = np.array(
                [instance.candidates[m].unary.get(cls, 0.0) for m in members]
            )
            if weights.sum() <= 0.0:
                weights = np.ones(len(members))
            weights = weights / weights.sum()
            locs = np.array(
                [instance.candidates[m].location for m in members], dtype=np.float64
            )
            mean = weights @ locs
            score = max(instance.candidates[m].unary.get(cls, 0.0) for m in members)
            joints[cls] = PoseJoint(location=(float(mean[0]), float(mean[1])), score=score)
        poses.append(Pose(joints=joints))
    return PoseSet(poses=tuple(poses))


def _interpolated_ap(scores: list[float], is_tp: list[bool], n_gt: int) -> float:
    """Area under the PR curve, precision interpolated to be non-increasing."""
    if n_gt == 0:
        return 0.0
    if not scores:
        return 0.0
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tp = np.cumsum([1.0 if is_tp[i] else 0.0 for i in order])
    fp = np.cumsum([0.0 if is_tp[i] else 1.0 for i in order])
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1.0)
    precision = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, precision):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


def evaluate_ap(
    predictions: PoseSet, ground_truth, tau: float = 0.5
) -> ApReport:
    """Per-class AP and their unweighted mean.

    ``tau`` scales each person's head size into the matching distance.  A
    predicted pose is only assigned to an annotation when at least one of
    its joints falls inside the threshold, so spurious poses cannot steal
    annotations.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    gt = list(ground_truth)
    classes_with_gt = sorted({cls for pose in gt for cls in pose.joints})

    ranked = sorted(
        range(len(predictions.poses)),
        key=lambda i: (-predictions.poses[i].score(), i),
    )
    assignment: dict[int, int] = {}
    taken: set[int] = set()
    for pred_idx in ranked:
        pred = predictions.poses[pred_idx]
        best_gt = -1
        best_hits = 0
        for gt_idx, pose in enumerate(gt):
            if gt_idx in taken:
                continue
            thr = tau * pose.head_size
            hits = 0
            for cls, joint in pred.joints.items():
                if cls in pose.joints and math.dist(joint.location, pose.joints[cls]) <= thr:
                    hits += 1
            if hits > best_hits:
                best_hits = hits
                best_gt = gt_idx
        if best_gt >= 0:
            assignment[pred_idx] = best_gt
            taken.add(best_gt)

    per_class: dict[int, float] = {}
    n_tp = n_fp = n_gt_total = 0
    for cls in classes_with_gt:
        scores: list[float] = []
        is_tp: list[bool] = []
        n_gt = sum(1 for pose in gt if cls in pose.joints)
        for pred_idx, pred in enumerate(predictions.poses):
            if cls not in pred.joints:
                continue
            joint = pred.joints[cls]
            hit = False
            if pred_idx in assignment:
                pose = gt[assignment[pred_idx]]
                if cls in pose.joints:
                    hit = math.dist(joint.location, pose.joints[cls]) <= tau * pose.head_size
            scores.append(joint.score)
            is_tp.append(hit)
        per_class[cls] = _interpolated_ap(scores, is_tp, n_gt)
        n_tp += sum(is_tp)
        n_fp += sum(1 for t in is_tp if not t)
        n_gt_total += n_gt

    mean_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
    counts = {
        "true_positives": int(n_tp),
        "false_positives": int(n_fp),
        "ground_truth_joints": int(n_gt_total),
        "predicted_poses": len(predictions.poses),
        "annotated_poses": len(gt),
    }
    return ApReport(per_class=per_class, mean_ap=mean_ap, counts=counts)
