from rankbias.learners.forest import (
    ForestParams,
    InsufficientDataError,
    RegressionForest,
    fit_regression_forest,
)
from rankbias.learners.meta import (
    UPLIFT_KINDS,
    OutcomeModel,
    UpliftModel,
    fit_outcome_model,
    fit_s_learner,
    fit_t_learner,
    fit_to_forest,
    fit_uplift,
    load_model,
    predict,
    save_model,
    transformed_outcome,
)

__all__ = [
    "ForestParams",
    "InsufficientDataError",
    "RegressionForest",
    "fit_regression_forest",
    "UPLIFT_KINDS",
    "OutcomeModel",
    "UpliftModel",
    "fit_outcome_model",
    "fit_s_learner",
    "fit_t_learner",
    "fit_to_forest",
    "fit_uplift",
    "load_model",
    "predict",
    "save_model",
    "transformed_outcome",
]
