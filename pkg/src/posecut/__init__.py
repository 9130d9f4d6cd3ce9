"""posecut: assemble multi-person poses from body-part detection candidates.

The problem is a joint partition-and-labeling program: every detection
candidate is either suppressed or labeled with one body-part class, and the
labeled candidates are partitioned into person clusters.  Unary costs come
from detector probabilities, pairwise costs from an image-conditioned
logistic model over geometric agreement features, and both enter the
objective in log-odds form.  Solvers range from exact enumeration (small
instances) through seeded local search to an incremental multi-stage
strategy with cluster contraction.
"""

from .candidates import NmsParams, nms, refine_locations, select_top, split_detections
from .costs import (
    BIG,
    DEFAULT_EPS,
    CostTable,
    build_costs,
    derive_pair_indicators,
    objective,
    objective_from_model,
)
from .errors import (
    InfeasibleSolution,
    MissingOffset,
    MissingWeights,
    NoAnchorJoints,
    NoGroundTruth,
    ParseError,
    PosecutError,
    RefusedTooLarge,
    SchemaError,
    ValidationError,
)
from .evaluation import ApReport, Pose, PoseJoint, PoseSet, assemble_poses, evaluate_ap
from .model import (
    Candidate,
    FeasibilityReport,
    GroundTruthPose,
    PartClass,
    ProblemInstance,
    Solution,
    load_instance,
    load_solution,
    make_solution,
    save_instance,
    save_solution,
    validate_instance,
    validate_solution,
)
from .pairwise import (
    FeatureMode,
    PairFeatures,
    PairwiseModel,
    TrainingSet,
    build_training_set,
    compute_features,
    compute_features_same_class,
    fit_logistic,
    load_model,
    pair_probability,
    pairwise_probability,
    save_model,
)
from .solver import (
    SearchParams,
    StageSchedule,
    StageTrace,
    contract_clusters,
    named_schedule,
    schedule_from_json,
    solve_exact,
    solve_heuristic,
    solve_incremental,
)
from .synth import (
    ScoremapRaster,
    SynthParams,
    default_skeleton,
    generate,
    render_pairwise_scoremap,
    skeleton_svg,
    write_pgm,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # model
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
    # candidates
    "NmsParams",
    "refine_locations",
    "nms",
    "split_detections",
    "select_top",
    # pairwise
    "FeatureMode",
    "PairFeatures",
    "PairwiseModel",
    "TrainingSet",
    "compute_features",
    "compute_features_same_class",
    "pairwise_probability",
    "pair_probability",
    "build_training_set",
    "fit_logistic",
    "save_model",
    "load_model",
    # costs
    "BIG",
    "DEFAULT_EPS",
    "CostTable",
    "build_costs",
    "objective",
    "objective_from_model",
    "derive_pair_indicators",
    # solver
    "StageSchedule",
    "SearchParams",
    "StageTrace",
    "solve_exact",
    "solve_heuristic",
    "solve_incremental",
    "contract_clusters",
    "named_schedule",
    "schedule_from_json",
    # evaluation
    "PoseJoint",
    "Pose",
    "PoseSet",
    "ApReport",
    "assemble_poses",
    "evaluate_ap",
    # synth
    "SynthParams",
    "default_skeleton",
    "generate",
    "ScoremapRaster",
    "render_pairwise_scoremap",
    "write_pgm",
    "skeleton_svg",
    # errors
    "PosecutError",
    "ParseError",
    "SchemaError",
    "ValidationError",
    "MissingOffset",
    "MissingWeights",
    "NoGroundTruth",
    "InfeasibleSolution",
    "RefusedTooLarge",
    "NoAnchorJoints",
]
