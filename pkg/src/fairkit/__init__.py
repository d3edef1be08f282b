"""Universal coresets and exact/approximate solvers for constrained
(fair) k-median and k-means clustering."""

from .core import (
    Assignment,
    BudgetExceededError,
    ConstraintMatrix,
    Dataset,
    EuclideanMetric,
    FairnessSpec,
    InfeasibleError,
    MatrixMetric,
    Objective,
    WeightedSet,
    build_equivalence_classes,
    clustering_cost,
    constraint_matrix_of,
    fairness_check,
)

__version__ = "0.1.0"
