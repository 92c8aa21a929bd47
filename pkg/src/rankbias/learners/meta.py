"""Outcome models and uplift meta-learners on RCT data.

Three uplift learners are provided:

``T``
    separate forests on the treated and control arms; the uplift is the
    difference of their predictions.
``S``
    one forest on ``(x, w)``; the uplift is the prediction at ``w=1`` minus
    the prediction at ``w=0``.
``TO-forest``
    a forest on the transformed outcome ``(y - m(x)) (w - p) / (p (1 - p))``
    whose conditional mean is the treatment effect under randomization for
    any ``m`` that ignores the row's own ``(w, y)``.  ``m`` is an out-of-bag
    outcome forest by default, which gives the pseudo-outcome a variance that
    tracks ``mu (1 - mu)`` as a causal forest's does; ``m = 0`` is the plain
    transform.  It stands in for a causal forest and is labelled as such in
    every output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from rankbias._rng import derive_seed
from rankbias.datagen import Dataset
from rankbias.learners.forest import (
    ForestParams,
    InsufficientDataError,
    RegressionForest,
    fit_regression_forest,
)

__all__ = [
    "UPLIFT_KINDS",
    "OutcomeModel",
    "UpliftModel",
    "transformed_outcome",
    "fit_outcome_model",
    "fit_t_learner",
    "fit_s_learner",
    "fit_to_forest",
    "fit_uplift",
    "predict",
    "save_model",
    "load_model",
]

FORMAT = "rankbias.model"
FORMAT_VERSION = 1
UPLIFT_KINDS = ("T", "S", "TO-forest")


@dataclass
class OutcomeModel:
    """Forest estimating ``E[y | x]`` with the treatment flag ignored."""

    forest: RegressionForest
    n_train: int

    @property
    def params(self) -> ForestParams:
        return self.forest.params

    def predict(self, X, threads: int = 1) -> np.ndarray:
        return self.forest.predict(X, threads=threads)


@dataclass
class UpliftModel:
    """Fitted uplift learner.  ``forests`` keys depend on ``kind``."""

    kind: str
    forests: dict[str, RegressionForest]
    treatment_probability: float
    n_train: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def predict(self, X, threads: int = 1) -> np.ndarray:
        if self.kind == "T":
            return self.forests["treated"].predict(X, threads) - self.forests["control"].predict(X, threads)
        if self.kind == "S":
            X = np.asarray(X, dtype=np.float64)
            if X.ndim == 1:
                X = X[:, None]
            n = X.shape[0]
            forest = self.forests["joint"]
            if X.shape[1] != forest.n_features_ - 1:
                raise ValueError(f"expected {forest.n_features_ - 1} features, got {X.shape[1]}")
            X1 = np.hstack([X, np.ones((n, 1))])
            X0 = np.hstack([X, np.zeros((n, 1))])
            return forest.predict(X1, threads) - forest.predict(X0, threads)
        if self.kind == "TO-forest":
            return self.forests["transformed"].predict(X, threads)
        raise ValueError(f"unknown uplift learner kind {self.kind!r}")


def _check_arms(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    treated = data.treatment == 1
    control = ~treated
    if not treated.any() or not control.any():
        raise InsufficientDataError("both treatment arms must be nonempty")
    return treated, control


def fit_outcome_model(data: Dataset, params: ForestParams, threads: int = 1) -> OutcomeModel:
    if data.n == 0:
        raise InsufficientDataError("dataset is empty")
    forest = fit_regression_forest(data.features, data.outcome.astype(np.float64), params, threads)
    return OutcomeModel(forest, data.n)


def fit_t_learner(
    data: Dataset,
    params: ForestParams,
    threads: int = 1,
    control_params: ForestParams | None = None,
) -> UpliftModel:
    """Two-model learner.

    ``control_params`` defaults to ``params`` with a seed derived from
    ``params.seed``, so the two arms draw independent bootstrap samples.
    """
    treated, control = _check_arms(data)
    y = data.outcome.astype(np.float64)
    cparams = control_params or params.replace(seed=derive_seed(params.seed, 0))
    m1 = fit_regression_forest(data.features[treated], y[treated], params, threads)
    m0 = fit_regression_forest(data.features[control], y[control], cparams, threads)
    return UpliftModel("T", {"treated": m1, "control": m0}, data.treatment_probability, data.n)


def fit_s_learner(data: Dataset, params: ForestParams, threads: int = 1) -> UpliftModel:
    _check_arms(data)
    Xw = np.hstack([data.features, data.treatment[:, None].astype(np.float64)])
    if params.mtry is not None and params.mtry > Xw.shape[1]:
        raise ValueError("mtry exceeds the number of features plus the treatment flag")
    forest = fit_regression_forest(Xw, data.outcome.astype(np.float64), params, threads)
    return UpliftModel("S", {"joint": forest}, data.treatment_probability, data.n)


def transformed_outcome(y, w, p: float, baseline=None) -> np.ndarray:
    """``(y - baseline) (w - p) / (p (1 - p))``; its mean given ``x`` is the CATE.

    ``baseline`` defaults to zero.  Any per-row value that does not depend on
    that row's ``(w, y)`` keeps the conditional mean unchanged.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"treatment probability must lie in (0, 1), got {p}")
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if baseline is not None:
        y = y - np.asarray(baseline, dtype=np.float64)
    return y * (w - p) / (p * (1.0 - p))


def fit_to_forest(
    data: Dataset, params: ForestParams, threads: int = 1, center: bool = True
) -> UpliftModel:
    """Transformed-outcome forest.

    With ``center=True`` the outcome is first centered by out-of-bag
    predictions of an outcome forest sharing ``params`` (seed derived from
    ``params.seed``).  That forest is only used during fitting.
    """
    p = data.treatment_probability
    if not 0.0 < p < 1.0:
        raise ValueError(f"treatment probability must lie in (0, 1), got {p}")
    _check_arms(data)
    y = data.outcome.astype(np.float64)
    baseline = None
    if center:
        m = RegressionForest(params.replace(seed=derive_seed(params.seed, 2)))
        baseline = m.fit(data.features, y, threads=threads, oob=True).oob_prediction_
    ystar = transformed_outcome(y, data.treatment, p, baseline)
    forest = fit_regression_forest(data.features, ystar, params, threads)
    return UpliftModel("TO-forest", {"transformed": forest}, p, data.n, {"centered": center})


def fit_uplift(kind: str, data: Dataset, params: ForestParams, threads: int = 1) -> UpliftModel:
    if kind == "T":
        return fit_t_learner(data, params, threads)
    if kind == "S":
        return fit_s_learner(data, params, threads)
    if kind in ("TO-forest", "TO"):
        return fit_to_forest(data, params, threads)
    raise ValueError(f"unknown uplift learner kind {kind!r}; expected one of {UPLIFT_KINDS}")


def predict(model: OutcomeModel | UpliftModel, features, threads: int = 1) -> np.ndarray:
    """One score per row: ``mu_hat(x)`` or ``tau_hat(x)``."""
    return model.predict(features, threads=threads)


def model_to_dict(model: OutcomeModel | UpliftModel) -> dict[str, Any]:
    if isinstance(model, OutcomeModel):
        return {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "model": "outcome",
            "n_train": model.n_train,
            "forests": {"outcome": model.forest.to_dict()},
        }
    return {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "model": "uplift",
        "kind": model.kind,
        "treatment_probability": model.treatment_probability,
        "n_train": model.n_train,
        "meta": model.meta,
        "forests": {k: f.to_dict() for k, f in model.forests.items()},
    }


def model_from_dict(d: dict[str, Any]) -> OutcomeModel | UpliftModel:
    if d.get("format") != FORMAT:
        raise ValueError("not a rankbias model document")
    if d.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('version')}")
    forests = {k: RegressionForest.from_dict(v) for k, v in d["forests"].items()}
    if d["model"] == "outcome":
        return OutcomeModel(forests["outcome"], int(d["n_train"]))
    return UpliftModel(
        d["kind"], forests, float(d["treatment_probability"]), int(d["n_train"]), d.get("meta", {})
    )


def save_model(model: OutcomeModel | UpliftModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path) -> OutcomeModel | UpliftModel:
    return model_from_dict(json.loads(Path(path).read_text()))
