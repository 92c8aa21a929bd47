"""Random forest regressor built on the compiled tree kernel."""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np

from rankbias._rng import MASK64, derive_seed, generator
from rankbias.learners import _tree

__all__ = [
    "ForestParams",
    "RegressionForest",
    "InsufficientDataError",
    "fit_regression_forest",
]


class InsufficientDataError(ValueError):
    """Too few rows (or an empty treatment arm) to fit a model."""


@dataclass(frozen=True)
class ForestParams:
    """Hyperparameters of a regression forest.

    ``mtry=None`` means every feature is a split candidate at every node.
    """

    n_trees: int = 200
    max_depth: int = 8
    min_leaf: int = 50
    mtry: int | None = None
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be at least 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes: Any) -> "ForestParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ForestParams":
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - fields
        if unknown:
            raise ValueError(f"unknown forest parameters: {sorted(unknown)}")
        return cls(**d)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    return np.ascontiguousarray(X)


class RegressionForest:
    """Bagged ensemble of squared-error regression trees.

    Each tree draws its bootstrap sample and feature subsets from a stream keyed
    by ``(params.seed, tree_index)``, so the fitted forest does not depend on
    how many threads grew it.
    """

    def __init__(self, params: ForestParams | None = None):
        self.params = params or ForestParams()
        self.trees_: list[dict[str, np.ndarray]] = []
        self.n_features_: int | None = None
        self.n_train_: int | None = None
        self.oob_prediction_: np.ndarray | None = None
        self._flat = None

    def fit(self, X, y, threads: int = 1, oob: bool = False) -> "RegressionForest":
        """Grow the trees.

        With ``oob=True`` and bootstrapping on, ``oob_prediction_[i]`` averages
        the trees whose bootstrap sample left row ``i`` out.  Rows that every
        tree saw fall back to the full-forest prediction.
        """
        X = _as_matrix(X)
        y = np.ascontiguousarray(y, dtype=np.float64)
        n, d = X.shape
        p = self.params
        if y.shape != (n,):
            raise ValueError("target length does not match the number of rows")
        if n < 2 * p.min_leaf or n < 1:
            raise InsufficientDataError(
                f"need at least {max(2 * p.min_leaf, 1)} rows for min_leaf={p.min_leaf}, got {n}"
            )
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        mtry = d if p.mtry is None else p.mtry
        if mtry > d:
            raise ValueError(f"mtry={mtry} exceeds the number of features {d}")

        order = np.stack([np.argsort(X[:, j], kind="stable") for j in range(d)])
        track_oob = oob and p.bootstrap
        oob_sum = np.zeros(n)
        oob_n = np.zeros(n, dtype=np.int64)

        def grow(t: int):
            if p.bootstrap:
                rng = generator(p.seed, t)
                counts = np.bincount(rng.integers(0, n, n), minlength=n).astype(np.int64)
                keep = counts[order[0]] > 0
                sorted_idx = np.empty((d, int(keep.sum())), dtype=np.int64)
                for j in range(d):
                    o = order[j]
                    sorted_idx[j] = o[counts[o] > 0]
            else:
                counts = np.ones(n, dtype=np.int64)
                sorted_idx = order.astype(np.int64)
            key = np.uint64(derive_seed(p.seed, t, 1))
            f, thr, lc, rc, val, k = _tree.build_tree(
                X, y, counts, sorted_idx, p.max_depth, p.min_leaf, mtry, key
            )
            tree = {
                "feature": f[:k].copy(),
                "threshold": thr[:k].copy(),
                "left": lc[:k].copy(),
                "right": rc[:k].copy(),
                "value": val[:k].copy(),
            }
            if not track_oob:
                return tree, None, None
            out_rows = np.flatnonzero(counts == 0)
            pred = np.empty(out_rows.size)
            _tree.predict_forest(*_flatten_trees([tree]), np.ascontiguousarray(X[out_rows]), pred)
            return tree, out_rows, pred

        trees = []

        def collect(results) -> None:
            # consumed in tree order, so OOB sums do not depend on thread timing
            for tree, rows, pred in results:
                trees.append(tree)
                if rows is not None:
                    oob_sum[rows] += pred
                    oob_n[rows] += 1

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                collect(pool.map(grow, range(p.n_trees)))
        else:
            collect(map(grow, range(p.n_trees)))
        self.trees_ = trees
        self.n_features_ = d
        self.n_train_ = n
        self._flat = None
        self.oob_prediction_ = None
        if oob:
            full = self.predict(X)
            if track_oob:
                seen = oob_n > 0
                full[seen] = oob_sum[seen] / oob_n[seen]
            self.oob_prediction_ = full
        return self

    def _flatten(self):
        if self._flat is None:
            self._flat = _flatten_trees(self.trees_)
        return self._flat

    def predict(self, X, threads: int = 1) -> np.ndarray:
        if not self.trees_:
            raise RuntimeError("forest is not fitted")
        X = _as_matrix(X)
        if X.shape[0] == 0:
            return np.empty(0)
        if X.shape[1] != self.n_features_:
            raise ValueError(
                f"expected {self.n_features_} features, got {X.shape[1]}"
            )
        out = np.empty(X.shape[0])
        flat = self._flatten()
        if threads > 1 and X.shape[0] >= 4 * threads:
            bounds = np.linspace(0, X.shape[0], threads + 1).astype(int)

            def run(k: int) -> None:
                lo, hi = bounds[k], bounds[k + 1]
                _tree.predict_forest(*flat, X[lo:hi], out[lo:hi])

            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, range(threads)))
        else:
            _tree.predict_forest(*flat, X, out)
        return out

    @property
    def n_nodes(self) -> int:
        return sum(len(t["value"]) for t in self.trees_)

    def to_dict(self) -> dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "n_features": self.n_features_,
            "n_train": self.n_train_,
            "trees": [{k: v.tolist() for k, v in t.items()} for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RegressionForest":
        forest = cls(ForestParams.from_dict(d["params"]))
        forest.n_features_ = int(d["n_features"])
        forest.n_train_ = d.get("n_train")
        trees = []
        for t in d["trees"]:
            trees.append(
                {
                    "feature": np.asarray(t["feature"], dtype=np.int64),
                    "threshold": np.asarray(t["threshold"], dtype=np.float64),
                    "left": np.asarray(t["left"], dtype=np.int64),
                    "right": np.asarray(t["right"], dtype=np.int64),
                    "value": np.asarray(t["value"], dtype=np.float64),
                }
            )
        forest.trees_ = trees
        return forest


def _flatten_trees(trees: list[dict[str, np.ndarray]]):
    """Pack trees into the flat arrays :func:`_tree.predict_forest` reads."""
    sizes = [len(t["value"]) for t in trees]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
    feature = np.concatenate([t["feature"] for t in trees])
    left = np.concatenate(
        [np.where(t["left"] >= 0, t["left"] + o, -1) for t, o in zip(trees, offsets)]
    )
    packed = np.empty(2 * len(feature), dtype=np.int64)
    packed[0::2] = feature
    packed[1::2] = left
    threshold = np.concatenate([t["threshold"] for t in trees])
    value = np.concatenate([t["value"] for t in trees])
    return packed, threshold, value, offsets


def fit_regression_forest(X, y, params: ForestParams, threads: int = 1) -> RegressionForest:
    """Fit a :class:`RegressionForest` on rows ``(X, y)``."""
    return RegressionForest(params).fit(X, y, threads=threads)
