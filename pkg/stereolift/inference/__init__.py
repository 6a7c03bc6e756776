from .depth import (
    SmoothnessWeights,
    CandidateBundle,
    InferenceProblem,
    InferenceResult,
    smoothness_weights,
    reprojection_error,
    flow_confidence,
    assemble_single,
    assemble_video,
    initialize_depth,
    infer,
    problem_objective,
    candidate_contribution,
    to_domain,
    from_domain,
)

__all__ = [
    "SmoothnessWeights",
    "CandidateBundle",
    "InferenceProblem",
    "InferenceResult",
    "smoothness_weights",
    "reprojection_error",
    "flow_confidence",
    "assemble_single",
    "assemble_video",
    "initialize_depth",
    "infer",
    "problem_objective",
    "candidate_contribution",
    "to_domain",
    "from_domain",
]
