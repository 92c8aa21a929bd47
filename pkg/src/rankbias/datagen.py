"""Synthetic randomized-controlled-trial data.

A data-generating process (DGP) is declared with a closed expression language
for the baseline outcome probability ``mu(x)`` and the conditional treatment
effect ``tau(x)``.  Configs are plain JSON, so every simulated data set can be
regenerated from its config file alone.

Outcomes are Bernoulli: ``y ~ Bern(mu(x) + w * tau(x))`` with ``w ~ Bern(p)``.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from rankbias._rng import MASK64, derive_seed, generator

__all__ = [
    "ConfigError",
    "Constant",
    "Identity",
    "Affine",
    "Step",
    "Product",
    "expr_from_dict",
    "Uniform",
    "Bernoulli",
    "DgpConfig",
    "Dataset",
    "generate",
    "make_bias_stress_dgp",
    "make_homoskedastic_dgp",
    "paper_dgp",
    "population_moments",
    "write_csv",
    "read_csv",
]

CLAMP_TOL = 1e-12
N_VALIDATION_POINTS = 10_000


class ConfigError(ValueError):
    """A DGP config is malformed or produces probabilities outside [0, 1]."""


# ---------------------------------------------------------------------------
# Expression language
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: float

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return np.full(X.shape[0], float(self.value))

    def max_feature(self) -> int:
        return -1

    def to_dict(self) -> dict[str, Any]:
        return {"type": "constant", "value": float(self.value)}


@dataclass(frozen=True)
class Identity:
    feature: int

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return X[:, self.feature].astype(np.float64, copy=True)

    def max_feature(self) -> int:
        return self.feature

    def to_dict(self) -> dict[str, Any]:
        return {"type": "identity", "feature": int(self.feature)}


@dataclass(frozen=True)
class Affine:
    """``intercept + sum_j coef[j] * x[j]``."""

    coef: tuple[float, ...]
    intercept: float = 0.0

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], float(self.intercept))
        for j, c in enumerate(self.coef):
            if c != 0.0:
                out += c * X[:, j]
        return out

    def max_feature(self) -> int:
        return len(self.coef) - 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "affine",
            "coef": [float(c) for c in self.coef],
            "intercept": float(self.intercept),
        }


@dataclass(frozen=True)
class Step:
    """``below`` where ``x[feature] < threshold``, ``above`` elsewhere."""

    feature: int
    threshold: float
    below: Any
    above: Any

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        mask = X[:, self.feature] < self.threshold
        return np.where(mask, self.below.evaluate(X), self.above.evaluate(X))

    def max_feature(self) -> int:
        return max(self.feature, self.below.max_feature(), self.above.max_feature())

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": "step",
            "feature": int(self.feature),
            "threshold": float(self.threshold),
            "below": self.below.to_dict(),
            "above": self.above.to_dict(),
        }


@dataclass(frozen=True)
class Product:
    factors: tuple[Any, ...]

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(X.shape[0])
        for f in self.factors:
            out = out * f.evaluate(X)
        return out

    def max_feature(self) -> int:
        return max((f.max_feature() for f in self.factors), default=-1)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "product", "factors": [f.to_dict() for f in self.factors]}


def expr_from_dict(d: dict[str, Any]):
    """Parse one node of the expression language."""
    try:
        kind = d["type"]
        if kind == "constant":
            return Constant(float(d["value"]))
        if kind == "identity":
            return Identity(int(d["feature"]))
        if kind == "affine":
            return Affine(tuple(float(c) for c in d["coef"]), float(d.get("intercept", 0.0)))
        if kind == "step":
            return Step(
                int(d["feature"]),
                float(d["threshold"]),
                expr_from_dict(d["below"]),
                expr_from_dict(d["above"]),
            )
        if kind == "product":
            return Product(tuple(expr_from_dict(f) for f in d["factors"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed expression {d!r}: {exc}") from None
    raise ConfigError(f"unknown expression type {kind!r}")


# ---------------------------------------------------------------------------
# Feature distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    low: float = 0.0
    high: float = 1.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.low, self.high, n)

    def extremes(self) -> tuple[float, float]:
        return (self.low, self.high)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "uniform", "low": float(self.low), "high": float(self.high)}


@dataclass(frozen=True)
class Bernoulli:
    p: float = 0.5

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return (rng.random(n) < self.p).astype(np.float64)

    def extremes(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "bernoulli", "p": float(self.p)}


def _distribution_from_dict(d: dict[str, Any]):
    kind = d.get("type")
    if kind == "uniform":
        return Uniform(float(d.get("low", 0.0)), float(d.get("high", 1.0)))
    if kind == "bernoulli":
        return Bernoulli(float(d.get("p", 0.5)))
    raise ConfigError(f"unknown feature distribution {d!r}")


# ---------------------------------------------------------------------------
# Config and data set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DgpConfig:
    """Declarative data-generating process.

    Construction validates that ``mu`` and ``mu + tau`` stay in [0, 1] on
    ``N_VALIDATION_POINTS`` sampled feature vectors plus the corners of the
    feature support.
    """

    n_observations: int
    treatment_probability: float
    mu: Any
    tau: Any
    n_features: int = 1
    feature_distribution: tuple[Any, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n_observations, (int, np.integer)) or self.n_observations < 1:
            raise ConfigError(f"n_observations must be a positive integer, got {self.n_observations!r}")
        if not 0.0 < self.treatment_probability < 1.0:
            raise ConfigError(f"treatment_probability must lie in (0, 1), got {self.treatment_probability}")
        if self.n_features < 1:
            raise ConfigError("n_features must be positive")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        dists = tuple(self.feature_distribution) or (Uniform(),) * self.n_features
        if len(dists) != self.n_features:
            raise ConfigError(
                f"{len(dists)} feature distributions given for {self.n_features} features"
            )
        object.__setattr__(self, "feature_distribution", dists)
        used = max(self.mu.max_feature(), self.tau.max_feature())
        if used >= self.n_features:
            raise ConfigError(f"expression references feature {used} but n_features={self.n_features}")
        self._check_probabilities()

    def _check_probabilities(self) -> None:
        rng = generator(self.seed, 0xC0FFEE)
        X = self.sample_features(rng, N_VALIDATION_POINTS)
        if self.n_features <= 10:
            corners = np.array(
                np.meshgrid(*[d.extremes() for d in self.feature_distribution], indexing="ij")
            ).reshape(self.n_features, -1).T
            X = np.vstack([X, corners])
        mu = self.mu.evaluate(X)
        tau = self.tau.evaluate(X)
        for name, v in (("mu", mu), ("mu + tau", mu + tau)):
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"{name} is not finite at some feature vector")
            lo, hi = float(v.min()), float(v.max())
            if lo < -CLAMP_TOL or hi > 1.0 + CLAMP_TOL:
                bad = X[int(np.argmin(v)) if lo < -CLAMP_TOL else int(np.argmax(v))]
                raise ConfigError(
                    f"{name} leaves [0, 1] (range [{lo:.6g}, {hi:.6g}]) e.g. at x={bad.tolist()}"
                )

    def sample_features(self, rng: np.random.Generator, n: int) -> np.ndarray:
        X = np.empty((n, self.n_features))
        for j, dist in enumerate(self.feature_distribution):
            X[:, j] = dist.sample(rng, n)
        return X

    def with_seed(self, seed: int) -> "DgpConfig":
        return dataclasses.replace(self, seed=seed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_observations": int(self.n_observations),
            "treatment_probability": float(self.treatment_probability),
            "n_features": int(self.n_features),
            "feature_distribution": [d.to_dict() for d in self.feature_distribution],
            "mu": self.mu.to_dict(),
            "tau": self.tau.to_dict(),
            "seed": int(self.seed),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DgpConfig":
        try:
            return cls(
                n_observations=int(d["n_observations"]),
                treatment_probability=float(d["treatment_probability"]),
                mu=expr_from_dict(d["mu"]),
                tau=expr_from_dict(d["tau"]),
                n_features=int(d.get("n_features", 1)),
                feature_distribution=tuple(
                    _distribution_from_dict(x) for x in d.get("feature_distribution", [])
                ),
                seed=int(d.get("seed", 0)),
            )
        except KeyError as exc:
            raise ConfigError(f"DGP config is missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "DgpConfig":
        return cls.from_dict(json.loads(text))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Columnar RCT sample.

    ``mu`` and ``tau`` hold the per-row ground truth for synthetic data and
    are ``None`` for loaded files.  Arrays are made read-only on creation.
    """

    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    treatment_probability: float
    mu: np.ndarray | None = None
    tau: np.ndarray | None = None
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        n = X.shape[0]
        w = np.asarray(self.treatment)
        y = np.asarray(self.outcome)
        if w.shape != (n,) or y.shape != (n,):
            raise ValueError(
                f"column lengths differ: features {n}, treatment {w.shape}, outcome {y.shape}"
            )
        for name, col in (("treatment", w), ("outcome", y)):
            if not np.all((col == 0) | (col == 1)):
                raise ValueError(f"{name} must be strictly binary")
        if not 0.0 < self.treatment_probability < 1.0:
            raise ValueError("treatment_probability must lie in (0, 1)")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "treatment", _readonly(w.astype(np.int8)))
        object.__setattr__(self, "outcome", _readonly(y.astype(np.int8)))
        for name in ("mu", "tau"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=np.float64)
                if v.shape != (n,):
                    raise ValueError(f"{name} must have length {n}")
                object.__setattr__(self, name, _readonly(v))
        if (self.mu is None) != (self.tau is None):
            raise ValueError("mu and tau must be given together")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length must equal the number of features")
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def has_ground_truth(self) -> bool:
        return self.mu is not None

    def subset(self, index: np.ndarray) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.features[index],
            self.treatment[index],
            self.outcome[index],
            self.treatment_probability,
            None if self.mu is None else self.mu[index],
            None if self.tau is None else self.tau[index],
            self.feature_names,
        )

    def difference_in_means(self) -> float:
        w = self.treatment == 1
        if w.all() or not w.any():
            raise ValueError("difference in means needs both arms")
        return float(self.outcome[w].mean() - self.outcome[~w].mean())


def generate(config: DgpConfig) -> Dataset:
    """Draw ``config.n_observations`` i.i.d. rows from ``config``."""
    n = config.n_observations
    if n < 2:
        raise ConfigError(f"need at least 2 observations, got {n}")
    rng = generator(config.seed)
    X = config.sample_features(rng, n)
    w = rng.random(n) < config.treatment_probability
    mu = config.mu.evaluate(X)
    tau = config.tau.evaluate(X)
    prob = mu + np.where(w, tau, 0.0)
    if np.any(prob < -CLAMP_TOL) or np.any(prob > 1.0 + CLAMP_TOL):
        raise ConfigError("mu + w * tau leaves [0, 1] on a generated row")
    np.clip(prob, 0.0, 1.0, out=prob)
    y = rng.random(n) < prob
    return Dataset(X, w, y, config.treatment_probability, mu, tau)


def paper_dgp(n_observations: int = 2002, seed: int = 0) -> DgpConfig:
    """One uniform feature, ``mu(x) = x``, no treatment effect, p = 0.5."""
    return DgpConfig(
        n_observations=n_observations,
        treatment_probability=0.5,
        mu=Identity(0),
        tau=Constant(0.0),
        n_features=1,
        seed=seed,
    )


def make_bias_stress_dgp(
    base_rate: float,
    effect_size: float,
    seed: int,
    *,
    n_observations: int = 400_000,
    treatment_probability: float = 0.85,
    subgroup_share: float = 0.1,
    n_noise_features: int = 0,
) -> DgpConfig:
    """DGP whose treatment effect sits where outcome noise is largest.

    Feature ``f0`` marks a subgroup (``f0 >= 1 - subgroup_share``) with
    baseline probability near 0.5 and effect ``effect_size``.  Everyone else
    has ``mu = base_rate * f1`` and no effect.  Extra uniform features carry
    no signal.
    """
    if not 0.0 < base_rate < 0.5:
        raise ValueError(f"base_rate must lie in (0, 0.5), got {base_rate}")
    if not effect_size > 0.0:
        raise ValueError(f"effect_size must be positive, got {effect_size}")
    if base_rate + effect_size > 1.0:
        raise ValueError("base_rate + effect_size must not exceed 1")
    if not 0.0 < subgroup_share < 1.0:
        raise ValueError("subgroup_share must lie in (0, 1)")
    sub_mu = min(0.5, 1.0 - effect_size)
    cut = 1.0 - subgroup_share
    d = 2 + n_noise_features
    return DgpConfig(
        n_observations=n_observations,
        treatment_probability=treatment_probability,
        mu=Step(0, cut, below=Affine((0.0, base_rate)), above=Constant(sub_mu)),
        tau=Step(0, cut, below=Constant(0.0), above=Constant(effect_size)),
        n_features=d,
        seed=seed,
    )


def make_homoskedastic_dgp(
    seed: int,
    *,
    base_rate: float = 0.3,
    effect_slope: float = 0.1,
    n_observations: int = 400_000,
    treatment_probability: float = 0.85,
) -> DgpConfig:
    """Control DGP: constant ``mu = base_rate`` and ``tau = effect_slope * f0``.

    The effect rises with ``f0`` while the control-arm outcome noise is the
    same for everyone, so a correct ranking shows no bottom-tail break.
    """
    return DgpConfig(
        n_observations=n_observations,
        treatment_probability=treatment_probability,
        mu=Constant(base_rate),
        tau=Affine((effect_slope,), 0.0),
        n_features=2,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "%.17g" % v


def write_csv(data: Dataset, path: str | Path, *, ground_truth: bool = True) -> None:
    """Write ``f0,...,f{d-1},treatment,outcome[,mu,tau]`` with a header row."""
    cols = [f"f{j}" for j in range(data.n_features)] + ["treatment", "outcome"]
    with_truth = ground_truth and data.has_ground_truth
    if with_truth:
        cols += ["mu", "tau"]
    X = data.features
    w = data.treatment
    y = data.outcome
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for i in range(data.n):
            parts = [_fmt(v) for v in X[i].tolist()]
            parts.append("1" if w[i] else "0")
            parts.append("1" if y[i] else "0")
            if with_truth:
                parts.append(_fmt(float(data.mu[i])))
                parts.append(_fmt(float(data.tau[i])))
            fh.write(",".join(parts) + "\n")


def read_csv(path: str | Path, treatment_probability: float | None = None) -> Dataset:
    """Read a file written by :func:`write_csv`, ground truth included."""
    from rankbias.ingest import ColumnMapping, load_csv

    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
    features = [c for c in header if c not in ("treatment", "outcome", "mu", "tau")]
    mapping = ColumnMapping(
        feature_columns=tuple(features),
        treatment_column="treatment",
        outcome_column="outcome",
        treatment_probability=treatment_probability,
        extra_columns=tuple(c for c in ("mu", "tau") if c in header),
    )
    return load_csv(path, mapping)


def population_moments(config: DgpConfig, n: int = 1_000_000, seed: int = 1) -> dict[str, float]:
    """Monte Carlo estimates of E[mu], E[tau] and E[mu(1-mu)] under ``config``."""
    rng = generator(derive_seed(config.seed, seed))
    X = config.sample_features(rng, n)
    mu = config.mu.evaluate(X)
    tau = config.tau.evaluate(X)
    return {
        "mean_mu": math.fsum(mu) / n,
        "mean_tau": math.fsum(tau) / n,
        "mean_noise": math.fsum(mu * (1.0 - mu)) / n,
    }
