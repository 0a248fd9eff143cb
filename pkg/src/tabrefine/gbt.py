"""Gradient-boosted decision trees with exact greedy splits.

Regression boosts depth-limited CART trees on squared-loss residuals; the
classifier boosts one tree per class and round on softmax gradients. Splits
are exact (sorted scan, no histogram binning), so fits are deterministic for
subsample=1.0 and, with a fixed seed, for subsample<1.0 as well.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EmptyTrainingSet(ValueError):
    pass


class NonFiniteTarget(ValueError):
    pass


class ClassIndexOutOfRange(ValueError):
    pass


class WidthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 100
    learning_rate: float = 0.1
    max_depth: int = 6
    min_samples_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_estimators, max_depth, min_samples_leaf must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must lie in (0, 1]")


class Tree:
    """Flat-array binary regression tree. feature == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def _new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def finalize(self):
        self.feature = np.asarray(self.feature, dtype=np.int32)
        self.threshold = np.asarray(self.threshold)
        self.left = np.asarray(self.left, dtype=np.int32)
        self.right = np.asarray(self.right, dtype=np.int32)
        self.value = np.asarray(self.value)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int32)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            idx = np.flatnonzero(internal)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
        return self.value[node]


def _best_split(X, y, idx, min_leaf):
    """Exact greedy variance-reduction split over all features.

    Returns (feature, threshold, left_idx, right_idx) or None. Gain ties
    break toward the lower feature index, then the earlier split position.
    """
    n = idx.size
    ysub = y[idx]
    total = ysub.sum()
    best_gain = -np.inf
    best = None
    base = total * total / n
    for f in range(X.shape[1]):
        xv = X[idx, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        # candidate boundaries: k in [min_leaf, n-min_leaf] with xs[k-1] < xs[k]
        ks = np.arange(min_leaf, n - min_leaf + 1)
        if ks.size == 0:
            continue
        valid = xs[ks - 1] < xs[ks]
        ks = ks[valid]
        if ks.size == 0:
            continue
        prefix = np.cumsum(ysub[order])
        sl = prefix[ks - 1]
        gains = sl * sl / ks + (total - sl) ** 2 / (n - ks) - base
        j = int(np.argmax(gains))
        if gains[j] > best_gain + 1e-12:
            k = int(ks[j])
            best_gain = float(gains[j])
            best = (f, 0.5 * (xs[k - 1] + xs[k]), idx[order[:k]], idx[order[k:]])
    return best


def _grow_tree(X, y, idx, params) -> Tree:
    tree = Tree()
    root = tree._new_node()
    stack = [(root, idx, 0)]
    while stack:
        node, nidx, depth = stack.pop()
        ysub = y[nidx]
        tree.value[node] = float(ysub.mean())
        if depth >= params.max_depth or nidx.size < 2 * params.min_samples_leaf \
                or np.ptp(ysub) == 0.0:
            continue
        split = _best_split(X, y, nidx, params.min_samples_leaf)
        if split is None:
            continue
        f, thr, li, ri = split
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = tree._new_node()
        tree.right[node] = tree._new_node()
        stack.append((tree.left[node], li, depth + 1))
        stack.append((tree.right[node], ri, depth + 1))
    return tree.finalize()


@dataclass
class GbtModel:
    kind: str                      # "regressor" | "classifier"
    n_features: int
    base_score: np.ndarray         # scalar array, or (K,) for classifiers
    trees: list                    # regressor: [Tree]; classifier: [[Tree]*K]
    params: GbtParams
    n_classes: int = 0
    train_loss_trace: list = field(default_factory=list, repr=False)

    FORMAT_VERSION = 1

    def save(self, path) -> None:
        """Self-describing binary dump (numpy archive, versioned)."""
        flat = {}
        rounds = []
        all_trees = (self.trees if self.kind == "regressor"
                     else [t for rnd in self.trees for t in rnd])
        for i, t in enumerate(all_trees):
            for name in ("feature", "threshold", "left", "right", "value"):
                flat[f"t{i}_{name}"] = getattr(t, name)
            rounds.append(len(t.feature))
        np.savez(path,
                 version=self.FORMAT_VERSION, kind=self.kind,
                 n_features=self.n_features, n_classes=self.n_classes,
                 base_score=self.base_score, n_trees=len(all_trees),
                 params=np.array([self.params.n_estimators, self.params.learning_rate,
                                  self.params.max_depth, self.params.min_samples_leaf,
                                  self.params.subsample, self.params.seed]),
                 **flat)

    @classmethod
    def load(cls, path) -> "GbtModel":
        z = np.load(path, allow_pickle=False)
        if int(z["version"]) != cls.FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {z['version']}")
        raw = z["params"]
        params = GbtParams(int(raw[0]), float(raw[1]), int(raw[2]), int(raw[3]),
                           float(raw[4]), int(raw[5]))
        trees = []
        for i in range(int(z["n_trees"])):
            t = Tree()
            for name in ("feature", "threshold", "left", "right", "value"):
                setattr(t, name, z[f"t{i}_{name}"])
            trees.append(t)
        kind = str(z["kind"])
        n_classes = int(z["n_classes"])
        if kind == "classifier":
            trees = [trees[i:i + n_classes] for i in range(0, len(trees), n_classes)]
        return cls(kind, int(z["n_features"]), z["base_score"], trees,
                   params, n_classes)


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2:
        raise ValueError("X must be 2-D")
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no training rows")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y row counts differ")
    return X, y


def _round_rows(n, params, rng):
    if params.subsample >= 1.0:
        return None
    k = max(1, int(params.subsample * n))
    return rng.choice(n, size=k, replace=False)


def fit_regressor(X, y, params: GbtParams = GbtParams()) -> GbtModel:
    """Squared-loss boosting: residual trees with mean-residual leaves."""
    X, y = _check_xy(X, np.asarray(y, dtype=np.float64))
    if not np.all(np.isfinite(y)):
        raise NonFiniteTarget("targets must be finite")
    rng = np.random.default_rng(params.seed)
    n = X.shape[0]
    base = float(y.mean())
    pred = np.full(n, base)
    trees, trace = [], []
    for _ in range(params.n_estimators):
        resid = y - pred
        rows = _round_rows(n, params, rng)
        idx = np.arange(n) if rows is None else rows
        tree = _grow_tree(X, resid, idx, params)
        pred += params.learning_rate * tree.predict(X)
        trees.append(tree)
        trace.append(float(np.mean((y - pred) ** 2)))
    return GbtModel("regressor", X.shape[1], np.asarray(base), trees, params,
                    train_loss_trace=trace)


def _softmax(F):
    z = F - F.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def fit_classifier(X, y, n_classes: int, params: GbtParams = GbtParams()) -> GbtModel:
    """Multiclass log-loss boosting: one tree per class per round fitted to
    the negative softmax gradient; Laplace-smoothed log-frequency base."""
    X, y = _check_xy(X, np.asarray(y))
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ClassIndexOutOfRange(f"labels must lie in [0, {n_classes})")
    rng = np.random.default_rng(params.seed)
    n = X.shape[0]
    counts = np.bincount(y, minlength=n_classes)
    base = np.log((counts + 1.0) / (n + n_classes))
    F = np.tile(base, (n, 1))
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    trees, trace = [], []
    for _ in range(params.n_estimators):
        P = _softmax(F)
        rows = _round_rows(n, params, rng)
        idx = np.arange(n) if rows is None else rows
        rnd = []
        for k in range(n_classes):
            neg_grad = onehot[:, k] - P[:, k]
            tree = _grow_tree(X, neg_grad, idx, params)
            F[:, k] += params.learning_rate * tree.predict(X)
            rnd.append(tree)
        trees.append(rnd)
        P = _softmax(F)
        trace.append(float(-np.mean(np.log(P[np.arange(n), y] + 1e-300))))
    return GbtModel("classifier", X.shape[1], base, trees, params,
                    n_classes=n_classes, train_loss_trace=trace)


def _raw_scores(model: GbtModel, X: np.ndarray) -> np.ndarray:
    if model.kind == "regressor":
        out = np.full(X.shape[0], float(model.base_score))
        for tree in model.trees:
            out += model.params.learning_rate * tree.predict(X)
        return out
    F = np.tile(model.base_score, (X.shape[0], 1))
    for rnd in model.trees:
        for k, tree in enumerate(rnd):
            F[:, k] += model.params.learning_rate * tree.predict(X)
    return F


def predict(model: GbtModel, X) -> np.ndarray:
    """Regressor: accumulated scores. Classifier: argmax class indices
    (lowest index wins ties)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise WidthMismatch(f"expected {model.n_features} features, "
                            f"got {X.shape[1] if X.ndim == 2 else 'non-2D'}")
    scores = _raw_scores(model, X)
    if model.kind == "regressor":
        return scores
    return scores.argmax(axis=1)


def predict_proba(model: GbtModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise WidthMismatch(f"expected {model.n_features} features")
    if model.kind != "classifier":
        raise ValueError("predict_proba requires a classifier")
    return _softmax(_raw_scores(model, X))
