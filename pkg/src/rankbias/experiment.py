"""Experiment drivers behind the command-line tool.

``run_mc`` repeats simulate/fit/predict over independent replications and
summarises the spread of the predictions at fixed feature points, together
with the true outcome noise of each prediction-rank bucket.  ``run_fit_eval``
fits learners on one data set, picks hyperparameters on a tuning split and
evaluates rankings on the test split.

Every random stream is keyed by the master seed, so outputs depend only on
the experiment spec, never on thread count or completion order.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from rankbias._rng import MASK64, derive_seed
from rankbias.datagen import (
    ConfigError,
    Dataset,
    DgpConfig,
    generate,
    make_bias_stress_dgp,
    make_homoskedastic_dgp,
    paper_dgp,
)
from rankbias.ingest import ColumnMapping, DataValidationError, SplitSpec, load_csv, split
from rankbias.learners import (
    UPLIFT_KINDS,
    ForestParams,
    OutcomeModel,
    UpliftModel,
    fit_outcome_model,
    fit_regression_forest,
    fit_uplift,
)
from rankbias.learners.meta import fit_t_learner
from rankbias.qini import BiasReport, QiniCurve, detect_ranking_bias, qini_curve, write_curve_csv
from rankbias.ranking import BucketStats, bucket_report, bucket_sums, write_bucket_report

__all__ = [
    "ExperimentFailure",
    "LearnerSpec",
    "ExperimentSpec",
    "McResult",
    "FitEvalResult",
    "dgp_from_dict",
    "run_mc",
    "run_fit_eval",
    "TUNING_GRID",
    "DEFAULT_GRID",
]

logger = logging.getLogger(__name__)

TUNING_GRID = tuple((depth, leaf) for depth in (4, 8, 12) for leaf in (20, 50, 200))
TUNING_TREES = 200
DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
MIN_SUCCESS_SHARE = 0.95
LOGLOSS_EPS = 1e-6
PRESETS = ("paper", "bias-stress", "homoskedastic")


class ExperimentFailure(RuntimeError):
    """Too many replications failed."""


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    params: ForestParams = field(default_factory=ForestParams)

    def __post_init__(self) -> None:
        kind = "TO-forest" if self.kind == "TO" else self.kind
        if kind not in UPLIFT_KINDS:
            raise ConfigError(f"unknown learner {self.kind!r}; expected one of {UPLIFT_KINDS}")
        object.__setattr__(self, "kind", kind)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": self.params.to_dict()}

    @classmethod
    def from_any(cls, d: str | dict[str, Any]) -> "LearnerSpec":
        if isinstance(d, str):
            return cls(d)
        try:
            return cls(d["kind"], ForestParams.from_dict(d.get("params", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad learner entry {d!r}: {exc}") from None


def dgp_from_dict(d: dict[str, Any]) -> DgpConfig:
    """Full DGP config, or ``{"preset": name, ...}`` with keyword overrides."""
    d = dict(d)
    preset = d.pop("preset", None)
    if preset is None:
        return DgpConfig.from_dict(d)
    try:
        if preset == "paper":
            return paper_dgp(**d)
        if preset == "bias-stress":
            d.setdefault("base_rate", 0.05)
            d.setdefault("effect_size", 0.30)
            d.setdefault("seed", 0)
            return make_bias_stress_dgp(**d)
        if preset == "homoskedastic":
            d.setdefault("seed", 0)
            return make_homoskedastic_dgp(**d)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad {preset!r} preset arguments: {exc}") from None
    raise ConfigError(f"unknown DGP preset {preset!r}; expected one of {PRESETS}")


@dataclass
class ExperimentSpec:
    """Everything an experiment needs, loadable from one JSON document.

    Exactly one of ``dgp`` and ``input`` is set.  ``grid`` lists feature
    vectors for the Monte Carlo moments; it defaults to
    ``f0 = 0.05, 0.10, ..., 0.95`` for single-feature DGPs.
    """

    dgp: DgpConfig | None = None
    input: str | None = None
    mapping: ColumnMapping | None = None
    learners: list[LearnerSpec] = field(default_factory=lambda: [LearnerSpec("T")])
    outcome_params: ForestParams = field(default_factory=ForestParams)
    replications: int = 200
    buckets: int = 100
    grid: list[tuple[float, ...]] | None = None
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    tune: bool = True
    tail_window: float = 0.10
    z: float = 3.0
    svg: bool = True

    def __post_init__(self) -> None:
        if (self.dgp is None) == (self.input is None):
            raise ConfigError("specify exactly one of 'dgp' and 'input'")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.buckets < 2:
            raise ConfigError("buckets must be at least 2")
        if not self.learners:
            raise ConfigError("at least one learner is required")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.grid is not None:
            self.grid = [tuple(float(v) for v in p) for p in self.grid]
        if self.dgp is not None:
            self._check_grid(self.dgp)

    def _check_grid(self, dgp: DgpConfig) -> None:
        if self.grid is None:
            if dgp.n_features != 1:
                return
            self.grid = [(x,) for x in DEFAULT_GRID]
        for point in self.grid:
            if len(point) != dgp.n_features:
                raise ConfigError(f"grid point {point} has {len(point)} coordinates, expected {dgp.n_features}")
            for v, dist in zip(point, dgp.feature_distribution):
                lo, hi = dist.extremes()
                if not lo <= v <= hi:
                    raise ConfigError(f"grid point {point} lies outside the feature support")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentSpec":
        known = {
            "dgp", "input", "mapping", "learners", "outcome_params", "replications", "buckets",
            "grid", "seed", "split", "tune", "tail_window", "z", "svg",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")
        kw: dict[str, Any] = {k: d[k] for k in ("input", "replications", "buckets", "grid", "seed", "tune", "tail_window", "z", "svg") if k in d}
        if "dgp" in d:
            kw["dgp"] = dgp_from_dict(d["dgp"])
        if "mapping" in d:
            m = dict(d["mapping"])
            if "feature_columns" in m:
                m["feature_columns"] = tuple(m["feature_columns"])
            try:
                kw["mapping"] = ColumnMapping(**m)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad column mapping: {exc}") from None
        if "learners" in d:
            kw["learners"] = [LearnerSpec.from_any(x) for x in d["learners"]]
        if "outcome_params" in d:
            try:
                kw["outcome_params"] = ForestParams.from_dict(d["outcome_params"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad outcome_params: {exc}") from None
        if "split" in d:
            fr = d["split"]
            try:
                kw["split"] = SplitSpec(*[float(v) for v in fr], seed=int(d.get("seed", 0)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad split {fr!r}: {exc}") from None
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


@dataclass
class McResult:
    """Per-learner moments at the grid points and pooled noise-by-rank profiles.

    ``mean[k]`` and ``sd[k]`` have one entry per grid point; ``sd`` divides
    by the replication count, so a single replication gives zero.
    """

    grid: np.ndarray
    learners: list[str]
    mean: dict[str, np.ndarray]
    sd: dict[str, np.ndarray]
    noise_sum: dict[str, np.ndarray]
    noise_count: dict[str, np.ndarray]
    n_success: int
    n_replications: int
    failures: list[dict[str, Any]]

    def noise_profile(self, learner: str) -> np.ndarray:
        c = self.noise_count[learner]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(c > 0, self.noise_sum[learner] / np.maximum(c, 1), np.nan)

    def write(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        d = self.grid.shape[1]
        feats = [f"f{j}" for j in range(d)]
        lines = [",".join(["learner", *feats, "mean", "sd", "n_replications"])]
        for name in self.learners:
            for k, point in enumerate(self.grid):
                lines.append(
                    ",".join(
                        [name, *(repr(float(v)) for v in point), repr(float(self.mean[name][k])),
                         repr(float(self.sd[name][k])), str(self.n_success)]
                    )
                )
        stats = out_dir / "mc_stats.csv"
        stats.write_text("\n".join(lines) + "\n")

        B = len(next(iter(self.noise_count.values())))
        lines = ["learner,bucket,lo,hi,n,noise_mean"]
        for name in self.learners:
            prof = self.noise_profile(name)
            for i in range(B):
                v = "" if math.isnan(prof[i]) else repr(float(prof[i]))
                lines.append(f"{name},{i},{i / B!r},{(i + 1) / B!r},{int(self.noise_count[name][i])},{v}")
        noise = out_dir / "noise_profile.csv"
        noise.write_text("\n".join(lines) + "\n")

        summary = out_dir / "mc_summary.json"
        summary.write_text(
            json.dumps(
                {
                    "n_replications": self.n_replications,
                    "n_success": self.n_success,
                    "learners": self.learners,
                    "failures": self.failures,
                },
                indent=2,
            )
            + "\n"
        )
        return [stats, noise, summary]


def _replicate(spec: ExperimentSpec, r: int, grid: np.ndarray):
    data = generate(spec.dgp.with_seed(derive_seed(spec.seed, r)))
    if not data.has_ground_truth:
        raise ValueError("Monte Carlo runs need ground-truth mu")
    noise = data.mu * (1.0 - data.mu)
    out = []
    for j, ls in enumerate(spec.learners):
        params = ls.params.replace(seed=derive_seed(spec.seed, r, j, ls.params.seed))
        model = fit_uplift(ls.kind, data, params)
        on_grid = model.predict(grid)
        own = model.predict(data.features)
        sums, counts = bucket_sums(own, noise, spec.buckets)
        out.append((on_grid, sums, counts))
    return out


def run_mc(spec: ExperimentSpec, threads: int = 1) -> McResult:
    """Run ``spec.replications`` independent replications.

    Raises :class:`ExperimentFailure` when fewer than 95% succeed.
    """
    if spec.dgp is None:
        raise ConfigError("Monte Carlo experiments need a DGP")
    if spec.grid is None:
        raise ConfigError("an evaluation grid is required for multi-feature DGPs")
    grid = np.asarray(spec.grid, dtype=np.float64)
    names = [ls.kind for ls in spec.learners]
    if len(set(names)) != len(names):
        raise ConfigError("learner kinds must be distinct in a Monte Carlo spec")

    def task(r: int):
        try:
            return _replicate(spec, r, grid)
        except (ValueError, ArithmeticError) as exc:
            logger.warning("replication %d failed: %s", r, exc)
            return exc

    R = spec.replications
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, range(R)))
    else:
        results = [task(r) for r in range(R)]

    failures = [
        {"replication": r, "error": f"{type(res).__name__}: {res}"}
        for r, res in enumerate(results)
        if isinstance(res, Exception)
    ]
    ok = [res for res in results if not isinstance(res, Exception)]
    if len(ok) < MIN_SUCCESS_SHARE * R:
        raise ExperimentFailure(f"only {len(ok)} of {R} replications succeeded")

    mean, sd, nsum, ncount = {}, {}, {}, {}
    for j, name in enumerate(names):
        preds = np.stack([res[j][0] for res in ok])
        mean[name] = np.array([math.fsum(col) / len(ok) for col in preds.T])
        sd[name] = np.array(
            [math.sqrt(math.fsum((col - m) ** 2) / len(ok)) for col, m in zip(preds.T, mean[name])]
        )
        sums = np.stack([res[j][1] for res in ok])
        nsum[name] = np.array([math.fsum(col) for col in sums.T])
        ncount[name] = np.sum([res[j][2] for res in ok], axis=0)
    logger.info("%d of %d replications succeeded", len(ok), R)
    return McResult(grid, names, mean, sd, nsum, ncount, len(ok), R, failures)


# ---------------------------------------------------------------------------
# Fit and evaluate
# ---------------------------------------------------------------------------


def log_loss(y, prob) -> float:
    """Mean binary cross-entropy with probabilities clipped to ``[eps, 1 - eps]``."""
    y = np.asarray(y, dtype=np.float64)
    p = np.clip(np.asarray(prob, dtype=np.float64), LOGLOSS_EPS, 1.0 - LOGLOSS_EPS)
    return -math.fsum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / y.size


def _candidates(base: ForestParams) -> list[ForestParams]:
    return [base.replace(n_trees=TUNING_TREES, max_depth=d, min_leaf=m) for d, m in TUNING_GRID]


def _fits(params: ForestParams, n: int) -> bool:
    return n >= 2 * params.min_leaf


def _tune_regression(X, y, Xv, yv, base: ForestParams, threads: int) -> ForestParams:
    best, best_loss = None, math.inf
    for cand in _candidates(base):
        if not _fits(cand, len(y)):
            continue
        loss = log_loss(yv, fit_regression_forest(X, y, cand, threads).predict(Xv, threads))
        logger.debug("depth=%d min_leaf=%d log-loss=%.6f", cand.max_depth, cand.min_leaf, loss)
        if loss < best_loss:
            best, best_loss = cand, loss
    if best is None:
        raise DataValidationError("training split too small for every tuning candidate")
    return best


@dataclass
class FittedRanking:
    label: str
    params: dict[str, Any]
    test_scores: np.ndarray
    curve: QiniCurve
    buckets: list[BucketStats]
    bias: BiasReport


@dataclass
class FitEvalResult:
    n_train: int
    n_tune: int
    n_test: int
    treatment_probability: float
    outcome: FittedRanking
    uplift: list[FittedRanking]
    buckets_by_mu: dict[str, list[BucketStats]]

    def summary(self) -> dict[str, Any]:
        def entry(f: FittedRanking) -> dict[str, Any]:
            return {
                "label": f.label,
                "params": f.params,
                "auuc": float(f.curve.auuc),
                "qini_endpoint": float(f.curve.ate),
                "break_detected": bool(f.bias.break_detected),
                "break_location": f.bias.break_location,
            }

        return {
            "n_train": self.n_train,
            "n_tune": self.n_tune,
            "n_test": self.n_test,
            "treatment_probability": self.treatment_probability,
            "models": [entry(self.outcome)] + [entry(u) for u in self.uplift],
        }

    def write(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for f in [self.outcome, *self.uplift]:
            p = out_dir / f"qini_{f.label}.csv"
            write_curve_csv(f.curve, p)
            paths.append(p)
            p = out_dir / f"bias_{f.label}.json"
            p.write_text(f.bias.to_json() + "\n")
            paths.append(p)
        for f in self.uplift:
            p = out_dir / f"buckets_by_tau_{f.label}.csv"
            write_bucket_report(f.buckets, p)
            paths.append(p)
        for label, stats in self.buckets_by_mu.items():
            p = out_dir / f"buckets_by_mu_{label}.csv"
            write_bucket_report(stats, p)
            paths.append(p)
        p = out_dir / "summary.json"
        p.write_text(json.dumps(self.summary(), indent=2) + "\n")
        paths.append(p)
        return paths


def _evaluate(label, params, scores, test: Dataset, spec: ExperimentSpec, mu_hat) -> FittedRanking:
    B = spec.buckets
    curve = qini_curve(scores, test.outcome, test.treatment, n_points=B, label=label)
    stats = bucket_report(scores, test.outcome, test.treatment, B, mu_hat=mu_hat)
    bias = detect_ranking_bias(
        curve,
        [s.ate_hat for s in stats],
        [s.ate_se for s in stats],
        tail_window=spec.tail_window,
        z=spec.z,
        bucket_counts=[s.n for s in stats],
    )
    return FittedRanking(label, params, scores, curve, stats, bias)


def _load(spec: ExperimentSpec) -> Dataset:
    if spec.dgp is not None:
        return generate(spec.dgp.with_seed(derive_seed(spec.seed, 0xDA7A)))
    if spec.mapping is None:
        raise ConfigError("file input needs a column mapping (feature columns)")
    return load_csv(spec.input, spec.mapping)


def run_fit_eval(spec: ExperimentSpec, threads: int = 1, data: Dataset | None = None) -> FitEvalResult:
    """Fit the outcome model and each uplift learner, then evaluate on test.

    With ``spec.tune`` the outcome model and each T-learner arm are chosen
    from :data:`TUNING_GRID` by tuning-split log-loss; S and TO-forest
    learners by tuning-split AUUC.  Without it, the configured parameters are
    used as given.
    """
    data = _load(spec) if data is None else data
    train, tune, test = split(data, SplitSpec(
        spec.split.train_fraction, spec.split.tune_fraction, spec.split.test_fraction, spec.seed
    ))
    for name, part in (("train", train), ("test", test)):
        n1 = int(part.treatment.sum())
        if n1 == 0 or n1 == part.n:
            raise DataValidationError(f"{name} split has an empty treatment arm")
    logger.info("split sizes: train=%d tune=%d test=%d", train.n, tune.n, test.n)

    # outcome model
    oparams = spec.outcome_params.replace(seed=derive_seed(spec.seed, 0xB0, spec.outcome_params.seed))
    y_tr = train.outcome.astype(np.float64)
    if spec.tune:
        oparams = _tune_regression(train.features, y_tr, tune.features, tune.outcome, oparams, threads)
    outcome: OutcomeModel = fit_outcome_model(train, oparams, threads)
    mu_test = outcome.predict(test.features, threads)

    uplift: list[FittedRanking] = []
    buckets_by_mu: dict[str, list[BucketStats]] = {}
    for j, ls in enumerate(spec.learners):
        params = ls.params.replace(seed=derive_seed(spec.seed, j, ls.params.seed))
        info: dict[str, Any]
        if not spec.tune:
            model: UpliftModel = fit_uplift(ls.kind, train, params, threads)
            info = params.to_dict()
        elif ls.kind == "T":
            model = _tuned_t_learner(train, tune, params, threads)
            info = {k: f.params.to_dict() for k, f in model.forests.items()}
        else:
            model = _tuned_by_auuc(ls.kind, train, tune, params, spec.buckets, threads)
            info = model.forests[next(iter(model.forests))].params.to_dict()
        label = ls.kind if ls.kind not in [u.label for u in uplift] else f"{ls.kind}_{j}"
        tau_test = model.predict(test.features, threads)
        uplift.append(_evaluate(label, info, tau_test, test, spec, mu_test))
        buckets_by_mu[label] = bucket_report(
            mu_test, test.outcome, test.treatment, spec.buckets, mu_hat=mu_test, predictions=tau_test
        )

    orank = _evaluate("outcome", oparams.to_dict(), mu_test, test, spec, mu_test)
    return FitEvalResult(train.n, tune.n, test.n, data.treatment_probability, orank, uplift, buckets_by_mu)


def _tuned_t_learner(train: Dataset, tune: Dataset, params: ForestParams, threads: int) -> UpliftModel:
    chosen = []
    for arm in (1, 0):
        tr = train.treatment == arm
        tv = tune.treatment == arm
        if not tv.any():
            raise DataValidationError("tuning split has an empty treatment arm")
        base = params if arm == 1 else params.replace(seed=derive_seed(params.seed, 0))
        chosen.append(
            _tune_regression(
                train.features[tr], train.outcome[tr].astype(np.float64),
                tune.features[tv], tune.outcome[tv], base, threads,
            )
        )
    return fit_t_learner(train, chosen[0], threads, control_params=chosen[1])


def _tuned_by_auuc(kind, train: Dataset, tune: Dataset, params: ForestParams, B: int, threads: int):
    best, best_area = None, -math.inf
    for cand in _candidates(params):
        if not _fits(cand, train.n):
            continue
        model = fit_uplift(kind, train, cand, threads)
        area = qini_curve(model.predict(tune.features, threads), tune.outcome, tune.treatment, B).auuc
        if area > best_area:
            best, best_area = model, area
    if best is None:
        raise DataValidationError("training split too small for every tuning candidate")
    return best
