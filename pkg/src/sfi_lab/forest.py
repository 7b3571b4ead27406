"""Bagged Gini decision trees on (age, race), predicting by vote fraction.

Features are a two-column matrix: age (numeric) and race (integer level
0..4). Age splits are thresholds at midpoints between adjacent distinct
values (``age <= t`` goes left); race splits send a subset of levels left.
Training works on the distinct feature rows weighted by bootstrap counts,
which keeps trees cheap when features are coarse.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence, TypeVar

import numpy as np

from sfi_lab.cohort import RACES
from sfi_lab.errors import ConfigError, DomainError

AGE, RACE = 0, 1
FEATURE_NAMES = ("age", "race")
N_LEVELS = len(RACES)
LEAF = -1

T = TypeVar("T")


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int = 1
    min_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def problems(self) -> list[str]:
        p = []
        if self.n_trees < 1:
            p.append("forest.n_trees must be >= 1")
        if not 1 <= self.mtry <= len(FEATURE_NAMES):
            p.append(f"forest.mtry must lie in [1, {len(FEATURE_NAMES)}]")
        if self.min_leaf < 1:
            p.append("forest.min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            p.append("forest.max_depth must be >= 0")
        if not 0 <= self.seed < 2**64:
            p.append("forest.seed must be an unsigned 64-bit integer")
        return p

    def validate(self) -> "ForestConfig":
        if self.problems():
            raise ConfigError(self.problems())
        return self


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree; node 0 is the root."""

    feature: np.ndarray  # AGE, RACE or LEAF
    threshold: np.ndarray
    left_levels: np.ndarray  # bitmask of race levels routed left
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive fraction of bootstrap weight at the node

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left_levels": self.left_levels.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left_levels"], dtype=np.int64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
        )

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))


def leaf_vote(fraction: np.ndarray) -> np.ndarray:
    """Majority vote of a leaf; an exact tie contributes half a vote."""
    return np.where(fraction > 0.5, 1.0, np.where(fraction == 0.5, 0.5, 0.0))


class ForestModel:
    """Trained forest. Immutable once built."""

    def __init__(self, trees: Sequence[Tree], config: ForestConfig | None = None):
        self.trees = tuple(trees)
        self.config = config or ForestConfig(n_trees=len(self.trees))
        sizes = [len(t.feature) for t in self.trees]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])  # noqa: E731
        self._roots = offsets
        self._feature = cat("feature")
        self._threshold = cat("threshold")
        self._levels = cat("left_levels")
        shift = np.repeat(offsets, sizes)
        self._left = cat("left") + shift
        self._right = cat("right") + shift
        self._vote = leaf_vote(cat("value"))

    def tree_votes(self, features) -> np.ndarray:
        """(n_trees, n_rows) matrix of per-tree votes in {0, 0.5, 1}."""
        X = check_features(features)
        if len(X) == 0:
            return np.zeros((len(self.trees), 0))
        rows, inverse = np.unique(X, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        age = rows[:, AGE][None, :]
        race = rows[:, RACE].astype(np.int64)[None, :]
        node = np.repeat(self._roots[:, None], len(rows), axis=1)
        while True:
            feat = self._feature[node]
            active = feat != LEAF
            if not active.any():
                break
            go_left = np.where(
                feat == AGE,
                age <= self._threshold[node],
                ((self._levels[node] >> race) & 1) == 1,
            )
            node = np.where(active, np.where(go_left, self._left[node], self._right[node]), node)
        return self._vote[node][:, inverse]

    def to_json(self) -> str:
        return json.dumps(
            {
                "features": list(FEATURE_NAMES),
                "race_levels": list(RACES),
                "config": asdict(self.config),
                "trees": [t.to_dict() for t in self.trees],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        d = json.loads(text)
        return cls([Tree.from_dict(t) for t in d["trees"]], ForestConfig(**d["config"]))


def check_features(features) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(FEATURE_NAMES):
        raise DomainError(f"expected an (n, {len(FEATURE_NAMES)}) feature matrix, got shape {X.shape}")
    race = X[:, RACE]
    if np.any((race != np.round(race)) | (race < 0) | (race >= N_LEVELS)):
        raise DomainError(f"race column must hold integer levels in [0, {N_LEVELS})")
    if np.any(~np.isfinite(X[:, AGE])):
        raise DomainError("age column must be finite")
    return X


def _best_age_split(age, n0, n1):
    # rows arrive sorted by age (np.unique order, preserved by boolean masks)
    c0, c1 = np.cumsum(n0), np.cumsum(n1)
    cut = np.flatnonzero(age[1:] != age[:-1])  # left = rows[:cut+1]
    if len(cut) == 0:
        return None
    return c0[cut], c1[cut], (age[cut] + age[cut + 1]) / 2


def _best_race_split(race, n0, n1):
    levels = race.astype(np.int64)
    s0 = np.bincount(levels, weights=n0, minlength=N_LEVELS)
    s1 = np.bincount(levels, weights=n1, minlength=N_LEVELS)
    present = np.flatnonzero(s0 + s1 > 0)
    if len(present) < 2:
        return None
    # ordering levels by positive fraction makes prefix splits optimal for Gini
    frac = s1[present] / (s0[present] + s1[present])
    ordered = present[np.lexsort((present, frac))]
    c0, c1 = np.cumsum(s0[ordered])[:-1], np.cumsum(s1[ordered])[:-1]
    masks = np.cumsum(1 << ordered)[:-1]
    return c0, c1, masks


def _gini_gain(c0, c1, t0, t1, min_leaf):
    """Weighted Gini decrease of each candidate split (-inf where a child is too small).

    Every candidate has positive weight on both sides, so no division by zero.
    """
    l = c0 + c1
    r0, r1 = t0 - c0, t1 - c1
    r = r0 + r1
    gain = (c0 * c0 + c1 * c1) / l + (r0 * r0 + r1 * r1) / r - (t0 * t0 + t1 * t1) / (t0 + t1)
    if min_leaf > 1:
        gain = np.where((l >= min_leaf) & (r >= min_leaf), gain, -np.inf)
    return gain


def _grow(U: np.ndarray, w0: np.ndarray, w1: np.ndarray, config: ForestConfig, rng: np.random.Generator) -> Tree:
    """Grow one tree on distinct rows ``U`` (sorted by age) with class weights w0, w1."""
    feature, threshold, levels, left, right, value = [], [], [], [], [], []
    age_col, race_col = U[:, AGE], U[:, RACE]
    n_features = len(FEATURE_NAMES)

    def new_node(t0, t1):
        feature.append(LEAF)
        threshold.append(0.0)
        levels.append(0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(t1 / (t0 + t1))
        return len(feature) - 1

    root = np.flatnonzero(w0 + w1 > 0)
    t0, t1 = float(w0[root].sum()), float(w1[root].sum())
    stack = [(new_node(t0, t1), root, 0, t0, t1)]
    while stack:
        node, idx, depth, t0, t1 = stack.pop()
        if t0 == 0 or t1 == 0 or len(idx) < 2:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        n0, n1 = w0[idx], w1[idx]
        best = None  # (gain, feature, split parameter)
        tried = 0
        for f in rng.permutation(n_features):
            if tried == config.mtry:
                break
            if f == AGE:
                cand = _best_age_split(age_col[idx], n0, n1)
            else:
                cand = _best_race_split(race_col[idx], n0, n1)
            if cand is None:  # constant within node; draw another feature
                continue
            tried += 1
            c0, c1, params = cand
            gain = _gini_gain(c0, c1, t0, t1, config.min_leaf)
            k = int(np.argmax(gain))
            if gain[k] > 1e-12 and (best is None or gain[k] > best[0]):
                best = (gain[k], f, params[k])
        if best is None:
            continue
        _, f, param = best
        if f == AGE:
            goes_left = age_col[idx] <= param
            threshold[node] = float(param)
        else:
            goes_left = ((int(param) >> race_col[idx].astype(np.int64)) & 1) == 1
            levels[node] = int(param)
        feature[node] = int(f)
        li, ri = idx[goes_left], idx[~goes_left]
        l0, l1 = float(n0[goes_left].sum()), float(n1[goes_left].sum())
        r0, r1 = t0 - l0, t1 - l1
        ln = new_node(l0, l1)
        rn = new_node(r0, r1)
        left[node], right[node] = ln, rn
        stack.append((rn, ri, depth + 1, r0, r1))
        stack.append((ln, li, depth + 1, l0, l1))

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(levels, dtype=np.int64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
    )


def train(features, labels, config: ForestConfig | None = None) -> ForestModel:
    """Fit ``config.n_trees`` trees, each on a same-size bootstrap resample."""
    config = (config or ForestConfig()).validate()
    X = check_features(features)
    y = np.asarray(labels, dtype=bool).reshape(-1)
    if len(X) == 0:
        raise DomainError("cannot train on empty data")
    if len(X) != len(y):
        raise DomainError(f"{len(X)} feature rows but {len(y)} labels")
    U, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n = len(X)
    streams = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = []
    for ss in streams:
        rng = np.random.default_rng(ss)
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
        w1 = np.bincount(inverse, weights=counts * y, minlength=len(U))
        w0 = np.bincount(inverse, weights=counts * ~y, minlength=len(U))
        trees.append(_grow(U, w0, w1, config, rng))
    return ForestModel(trees, config)


def predict_proba(model: ForestModel, features) -> np.ndarray:
    """Fraction of trees voting positive for each row."""
    votes = model.tree_votes(features)
    return votes.mean(axis=0)


def split_half(dataset: Sequence[T], seed: int) -> tuple[list[T], list[T]]:
    """Disjoint uniform-random halves. An odd-sized input loses one random record."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    if len(order) % 2:
        warnings.warn(f"odd dataset size {len(dataset)}: dropping one random record", stacklevel=2)
        order = order[1:]
    half = len(order) // 2
    train_idx, test_idx = np.sort(order[:half]), np.sort(order[half:])
    return [dataset[i] for i in train_idx], [dataset[i] for i in test_idx]
