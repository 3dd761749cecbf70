"""
Nuisance regression learners for r(Z) = E[X|Z] and l(Z) = E[Y|Z].

All learners are numpy implementations, single-threaded and deterministic given
``LearnerSpec.seed``.
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from app.models.errors import DegenerateTargetWarning, PreconditionError, ShapeError
from app.models.schemas import DesignMatrix, LearnerKind, LearnerSpec
from app.services.numkit import AdditiveSplineBasis, monomial_design, solve_ls
from app.utils.helpers import make_rng

logger = logging.getLogger(__name__)

MAX_BINS = 256
MIN_TREE_SAMPLES = 10


def _as_matrix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return z.reshape(-1, 1) if z.ndim == 1 else z


class Learner:
    """fit / predict interface shared by every nuisance learner."""

    def __init__(self, spec: LearnerSpec):
        self.spec = spec

    def fit(self, z: np.ndarray, t: np.ndarray) -> "Learner":
        raise NotImplementedError

    def predict(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError


# ============ Linear-in-basis learners ============

class PolyRidge(Learner):
    """Polynomial features in Z with an (unpenalised-intercept) ridge penalty."""

    def _design(self, z: np.ndarray) -> DesignMatrix:
        names = [f"z{k + 1}" for k in range(z.shape[1])]
        return monomial_design(z, self.spec.degree, names)

    def fit(self, z, t):
        design = self._design(z)
        if self.spec.lam > 0:
            # ridge as least squares on rows augmented with sqrt(lam) * I
            penalty = np.sqrt(self.spec.lam) * np.eye(design.q)[1:]
            design = DesignMatrix(
                values=np.vstack([design.values, penalty]),
                column_labels=design.column_labels,
            )
            t = np.concatenate([t, np.zeros(penalty.shape[0])])
        self.coef_ = solve_ls(design, t).coefficients
        return self

    def predict(self, z):
        return self._design(z).values @ self.coef_


class SplineAdditive(Learner):
    """Sum of per-control B-spline bases fitted by least squares."""

    def fit(self, z, t):
        self.basis_ = AdditiveSplineBasis(self.spec.degree, self.spec.knots).fit(z)
        self.coef_ = solve_ls(self.basis_.transform(z), t).coefficients
        return self

    def predict(self, z):
        return self.basis_.transform(z).values @ self.coef_


# ============ Gradient boosted trees ============

def quantile_edges(values: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    """At most ``max_bins - 1`` distinct cut points at empirical quantiles."""
    cuts = np.quantile(values, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    return np.unique(cuts)


@dataclass
class RegressionTree:
    """Depth-limited tree over binned features; ``bin <= threshold`` goes left."""

    feature: List[int] = field(default_factory=list)
    threshold: List[int] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)

    def _add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.value) - 1

    def predict_binned(self, bins: np.ndarray) -> np.ndarray:
        out = np.empty(bins.shape[0])
        stack = [(0, np.arange(bins.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.value[node]
                continue
            go_left = bins[idx, self.feature[node]] <= self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out


def _best_split(bins: np.ndarray, n_bins: List[int], g: np.ndarray, min_leaf: int) -> Tuple[int, int, float]:
    """(feature, threshold bin, gain) of the best variance-reduction split, or feature -1."""
    total_sum, total_cnt = g.sum(), g.size
    parent = total_sum**2 / total_cnt
    best = (-1, -1, 1e-12)
    for k in range(bins.shape[1]):
        if n_bins[k] < 2:
            continue
        sums = np.cumsum(np.bincount(bins[:, k], weights=g, minlength=n_bins[k]))[:-1]
        counts = np.cumsum(np.bincount(bins[:, k], minlength=n_bins[k]))[:-1]
        right_counts = total_cnt - counts
        valid = (counts >= min_leaf) & (right_counts >= min_leaf)
        if not valid.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sums**2 / counts + (total_sum - sums) ** 2 / right_counts - parent
        gain = np.where(valid, gain, -np.inf)
        s = int(np.argmax(gain))
        if gain[s] > best[2]:
            best = (k, s, float(gain[s]))
    return best


def build_tree(bins: np.ndarray, n_bins: List[int], g: np.ndarray, depth: int, min_leaf: int) -> RegressionTree:
    tree = RegressionTree()
    root = tree._add(float(g.mean()))
    stack = [(root, np.arange(g.size), 0)]
    while stack:
        node, idx, level = stack.pop()
        if level >= depth or idx.size < 2 * min_leaf:
            continue
        feature, threshold, _ = _best_split(bins[idx], n_bins, g[idx], min_leaf)
        if feature < 0:
            continue
        go_left = bins[idx, feature] <= threshold
        left_idx, right_idx = idx[go_left], idx[~go_left]
        tree.feature[node], tree.threshold[node] = feature, threshold
        tree.left[node] = tree._add(float(g[left_idx].mean()))
        tree.right[node] = tree._add(float(g[right_idx].mean()))
        stack.append((tree.left[node], left_idx, level + 1))
        stack.append((tree.right[node], right_idx, level + 1))
    return tree


class GradientBoostedTrees(Learner):
    """Least-squares boosting: start at the mean, add ``lr * tree(residual)`` per round."""

    def _bin(self, z: np.ndarray) -> np.ndarray:
        return np.column_stack([
            np.searchsorted(edges, z[:, k], side="left") for k, edges in enumerate(self.edges_)
        ])

    def fit(self, z, t):
        if z.shape[0] < MIN_TREE_SAMPLES:
            raise PreconditionError(f"gbt needs at least {MIN_TREE_SAMPLES} rows")
        spec = self.spec
        self.edges_ = [quantile_edges(z[:, k]) for k in range(z.shape[1])]
        n_bins = [edges.size + 1 for edges in self.edges_]
        bins = self._bin(z)

        self.init_ = float(t.mean())
        current = np.full(t.size, self.init_)
        self.trees_: List[RegressionTree] = []
        for _ in range(spec.trees):
            tree = build_tree(bins, n_bins, t - current, spec.depth, spec.min_leaf)
            current += spec.learning_rate * tree.predict_binned(bins)
            self.trees_.append(tree)
        return self

    def predict(self, z):
        bins = self._bin(z)
        out = np.full(z.shape[0], self.init_)
        for tree in self.trees_:
            out += self.spec.learning_rate * tree.predict_binned(bins)
        return out


# ============ Multilayer perceptron ============

Params = List[Tuple[np.ndarray, np.ndarray]]


def init_params(n_in: int, layers: int, width: int, rng: np.random.Generator) -> Params:
    """He-initialised weights, zero biases; last layer maps to one output."""
    sizes = [n_in] + [width] * layers + [1]
    return [
        (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in), np.zeros(fan_out))
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:])
    ]


def forward(params: Params, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """Network output plus per-layer inputs and pre-activations (for backprop)."""
    inputs, pre = [], []
    a = x
    for w, b in params[:-1]:
        inputs.append(a)
        h = a @ w + b
        pre.append(h)
        a = np.maximum(h, 0.0)
    inputs.append(a)
    w, b = params[-1]
    return (a @ w + b)[:, 0], inputs, pre


def loss_and_gradients(params: Params, x: np.ndarray, t: np.ndarray) -> Tuple[float, Params]:
    """Half mean squared error and its gradient for every (W, b)."""
    out, inputs, pre = forward(params, x)
    diff = out - t
    loss = 0.5 * float(np.mean(diff**2))

    delta = (diff / t.size)[:, None]
    grads: Params = []
    for layer in range(len(params) - 1, -1, -1):
        w, _ = params[layer]
        grads.append((inputs[layer].T @ delta, delta.sum(axis=0)))
        if layer > 0:
            delta = (delta @ w.T) * (pre[layer - 1] > 0)
    return loss, grads[::-1]


class MLPRegressor(Learner):
    """ReLU network on standardised inputs and target, trained with Adam at a fixed step."""

    beta1, beta2, eps = 0.9, 0.999, 1e-8

    def fit(self, z, t):
        if z.shape[0] < MIN_TREE_SAMPLES:
            raise PreconditionError(f"mlp needs at least {MIN_TREE_SAMPLES} rows")
        spec = self.spec
        rng = make_rng(spec.seed)
        self.z_mean_, self.z_sd_ = z.mean(axis=0), z.std(axis=0)
        self.z_sd_[self.z_sd_ == 0] = 1.0
        self.t_mean_, self.t_sd_ = float(t.mean()), float(t.std())
        x = (z - self.z_mean_) / self.z_sd_
        target = (t - self.t_mean_) / self.t_sd_

        params = init_params(x.shape[1], spec.layers, spec.width, rng)
        m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
        step = 0
        for _ in range(spec.epochs):
            order = rng.permutation(x.shape[0])
            for start in range(0, x.shape[0], spec.batch):
                batch = order[start:start + spec.batch]
                _, grads = loss_and_gradients(params, x[batch], target[batch])
                step += 1
                params = self._adam(params, grads, m, v, step)
        self.params_ = params
        return self

    def _adam(self, params: Params, grads: Params, m: Params, v: Params, step: int) -> Params:
        lr = self.spec.learning_rate
        correction1 = 1.0 - self.beta1**step
        correction2 = 1.0 - self.beta2**step
        updated = []
        for i, ((w, b), (gw, gb)) in enumerate(zip(params, grads)):
            mw = self.beta1 * m[i][0] + (1 - self.beta1) * gw
            mb = self.beta1 * m[i][1] + (1 - self.beta1) * gb
            vw = self.beta2 * v[i][0] + (1 - self.beta2) * gw**2
            vb = self.beta2 * v[i][1] + (1 - self.beta2) * gb**2
            m[i], v[i] = (mw, mb), (vw, vb)
            w = w - lr * (mw / correction1) / (np.sqrt(vw / correction2) + self.eps)
            b = b - lr * (mb / correction1) / (np.sqrt(vb / correction2) + self.eps)
            updated.append((w, b))
        return updated

    def predict(self, z):
        out, _, _ = forward(self.params_, (z - self.z_mean_) / self.z_sd_)
        return self.t_mean_ + self.t_sd_ * out


LEARNERS = {
    LearnerKind.POLY_RIDGE: PolyRidge,
    LearnerKind.SPLINE_ADDITIVE: SplineAdditive,
    LearnerKind.GBT: GradientBoostedTrees,
    LearnerKind.MLP: MLPRegressor,
}


def make_learner(spec: LearnerSpec) -> Learner:
    return LEARNERS[spec.kind](spec)


def fit_predict(spec: LearnerSpec, z_train: np.ndarray, t_train: np.ndarray, z_eval: np.ndarray) -> np.ndarray:
    """
    Train a learner on ``(z_train, t_train)`` and predict at ``z_eval``.

    A constant training target yields the constant predictor and a
    ``DegenerateTargetWarning``.
    """
    z_train, z_eval = _as_matrix(z_train), _as_matrix(z_eval)
    t_train = np.asarray(t_train, dtype=np.float64)
    if t_train.ndim != 1 or z_train.shape[0] != t_train.shape[0]:
        raise ShapeError(f"z_train has {z_train.shape[0]} rows, t_train has shape {t_train.shape}")
    if z_train.shape[1] != z_eval.shape[1]:
        raise ShapeError(f"z_train has {z_train.shape[1]} columns, z_eval has {z_eval.shape[1]}")
    if t_train.size == 0:
        raise ShapeError("empty training set")

    if np.ptp(t_train) == 0:
        warnings.warn(
            f"{spec.kind.value}: training target is constant, using the constant predictor",
            DegenerateTargetWarning,
            stacklevel=2,
        )
        return np.full(z_eval.shape[0], t_train[0])

    learner = make_learner(spec).fit(z_train, t_train)
    logger.debug("fitted %s on %d rows", spec, z_train.shape[0])
    return learner.predict(z_eval)
