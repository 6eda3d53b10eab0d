"""Complete deconvolution of bulk expression matrices.

Factors a nonnegative gene-by-sample matrix G into cell-type signatures C
and column-stochastic proportions P.  Identifiability comes from structure
found in the data itself: spectral clustering of the gene-correlation
graph locates marker genes, a solvability penalty pins their signature
rows to coordinate axes, and a correlation-graph manifold penalty keeps
co-expressed genes co-expressed in C.  The resulting problem is solved
with a scaled ADMM whose subproblems have closed forms except for the
penalty block, which runs an inner gradient descent.
"""

from .errors import (
    ClusteringError,
    DataError,
    GraphDeconvError,
    NumericError,
    ParameterError,
)
from .graph import (
    ClusterAssignment,
    GraphSparsity,
    LaplacianKind,
    MarkerAssignment,
    SimilarityGraph,
    build_adjacency,
    cluster_rows,
    graph_laplacian,
    select_markers,
    spectral_embed,
)
from .matrices import (
    ExpressionMatrix,
    FactorPair,
    ProportionMatrix,
    SignatureMatrix,
    eisen_distance,
    l1_normalize_columns,
    relative_residue,
)
from .penalties import (
    PenaltyConfig,
    PenaltyWeights,
    f1_gradient,
    f1_value,
    f2_euclidean_trace,
    f2_gradient,
    f2_gradient_half_diag,
    f2_value,
)
from .pipeline import (
    BenchReport,
    DeconvolutionResult,
    StructureResult,
    prepare_structure,
    run_benchmark,
    run_deconvolution,
)
from .solver import (
    InnerConfig,
    IterationRecord,
    Solution,
    SolverConfig,
    SolverState,
    project_simplex,
    solve,
    update_a,
    update_c,
    update_p,
    update_q,
)
from .synthetic import (
    AlignmentReport,
    GroundTruth,
    SyntheticSpec,
    align_solution,
    generate_synthetic,
    identifiability_probe,
    scattering_diagnostic,
    solution_errors,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentReport",
    "BenchReport",
    "ClusterAssignment",
    "ClusteringError",
    "DataError",
    "DeconvolutionResult",
    "ExpressionMatrix",
    "FactorPair",
    "GraphDeconvError",
    "GraphSparsity",
    "GroundTruth",
    "InnerConfig",
    "IterationRecord",
    "LaplacianKind",
    "MarkerAssignment",
    "NumericError",
    "ParameterError",
    "PenaltyConfig",
    "PenaltyWeights",
    "ProportionMatrix",
    "SignatureMatrix",
    "SimilarityGraph",
    "Solution",
    "SolverConfig",
    "SolverState",
    "StructureResult",
    "SyntheticSpec",
    "align_solution",
    "build_adjacency",
    "cluster_rows",
    "eisen_distance",
    "f1_gradient",
    "f1_value",
    "f2_euclidean_trace",
    "f2_gradient",
    "f2_gradient_half_diag",
    "f2_value",
    "generate_synthetic",
    "graph_laplacian",
    "identifiability_probe",
    "l1_normalize_columns",
    "prepare_structure",
    "project_simplex",
    "relative_residue",
    "run_benchmark",
    "run_deconvolution",
    "scattering_diagnostic",
    "select_markers",
    "solution_errors",
    "solve",
    "spectral_embed",
    "update_a",
    "update_c",
    "update_p",
    "update_q",
]
