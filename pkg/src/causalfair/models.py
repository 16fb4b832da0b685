"""Probabilistic binary classifiers: weighted L2 logistic regression (Newton)
and a small tanh network trained by mini-batch gradient descent.

Both minimise the same objective::

    sum_i w_i * logloss_i / sum_i w_i  +  l2/2 * ||weights||^2  +  pr_eta * PI

where ``PI`` is the prejudice index, the mutual information between the
model's predicted label and the group, estimated from predicted
probabilities (Kamishima et al., 2012). Intercepts and biases are not
penalised.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .tabular import EncodedMatrix

_EPS = 1e-15


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TrainConfig:
    l2: float = 1e-4
    pr_eta: float = 0.0
    max_iter: int = 500
    tol: float = 1e-8
    learning_rate: float = 0.05
    sample_weights: np.ndarray | None = None
    # MLP only
    batch_size: int = 256
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        for name in ("l2", "pr_eta", "tol", "learning_rate", "momentum"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.max_iter < 1 or self.batch_size < 1:
            raise ValueError("max_iter and batch_size must be positive")
        if self.sample_weights is not None:
            w = np.asarray(self.sample_weights, dtype=float)
            if w.ndim != 1 or (w < 0).any() or not np.isfinite(w).all():
                raise ValueError("sample_weights must be a finite nonnegative vector")
            object.__setattr__(self, "sample_weights", w)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        out["sample_weights"] = None if self.sample_weights is None else "per-row"
        return out


@dataclass(frozen=True, eq=False)
class GlmModel:
    coefficients: np.ndarray
    intercept: float
    feature_names: tuple[str, ...]
    converged: bool = True
    n_iter: int = 0
    trace: tuple[float, ...] = ()
    config: TrainConfig = field(default_factory=TrainConfig)

    kind = "logistic"

    def __post_init__(self):
        coef = np.array(self.coefficients, dtype=float).ravel()
        names = tuple(self.feature_names) if self.feature_names else tuple(f"f{i}" for i in range(coef.size))
        if len(names) != coef.size:
            raise ValueError("feature_names not aligned with coefficients")
        if not (np.isfinite(coef).all() and math.isfinite(self.intercept)):
            raise ValueError("non-finite model parameters")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def n_features(self) -> int:
        return self.coefficients.size

    def params(self) -> np.ndarray:
        return np.concatenate([[self.intercept], self.coefficients])

    def with_params(self, theta) -> "GlmModel":
        theta = np.asarray(theta, dtype=float)
        return dataclasses.replace(self, intercept=theta[0], coefficients=theta[1:])


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    feature_names: tuple[str, ...] = ()
    converged: bool = False
    n_iter: int = 0
    trace: tuple[float, ...] = ()
    config: TrainConfig = field(default_factory=TrainConfig)

    kind = "mlp"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 3 or sizes[-1] != 1:
            raise ValueError("layer_sizes must be (input, hidden..., 1)")
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=float)
            b = np.array(b, dtype=float).ravel()
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has shape {w.shape}/{b.shape}, expected "
                                 f"{(sizes[i], sizes[i + 1])}/{(sizes[i + 1],)}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("non-finite model parameters")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        if len(ws) != len(sizes) - 1:
            raise ValueError("number of layers does not match layer_sizes")
        names = tuple(self.feature_names) or tuple(f"f{i}" for i in range(sizes[0]))
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))
        object.__setattr__(self, "feature_names", names)

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_params(self, theta) -> "MlpModel":
        theta = np.asarray(theta, dtype=float)
        ws, bs, k = [], [], 0
        for i in range(len(self.layer_sizes) - 1):
            n_in, n_out = self.layer_sizes[i], self.layer_sizes[i + 1]
            ws.append(theta[k:k + n_in * n_out].reshape(n_in, n_out))
            k += n_in * n_out
            bs.append(theta[k:k + n_out])
            k += n_out
        return dataclasses.replace(self, weights=tuple(ws), biases=tuple(bs))


# ----------------------------------------------------------------------------
# shared objective pieces
# ----------------------------------------------------------------------------

def _as_design(design) -> tuple[np.ndarray, tuple[str, ...]]:
    if isinstance(design, EncodedMatrix):
        return design.design, design.feature_names
    arr = np.asarray(design, dtype=float)
    if arr.ndim != 2:
        raise ValueError("design must be two-dimensional")
    return arr, ()


def _check_inputs(X, labels, group, config):
    y = np.asarray(labels, dtype=float).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"dimension mismatch: {X.shape[0]} rows but {y.shape[0]} labels")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be binary (0/1)")
    if not np.isfinite(X).all():
        raise ValueError("design contains non-finite values")
    if config.sample_weights is None:
        w = np.ones_like(y)
    else:
        w = config.sample_weights
        if w.shape[0] != y.shape[0]:
            raise ValueError(f"dimension mismatch: {w.shape[0]} weights for {y.shape[0]} rows")
        if w.sum() <= 0:
            raise ValueError("sample weights sum to zero")
    g = None
    if config.pr_eta > 0:
        if group is None:
            raise ValueError("group is required when pr_eta > 0")
        g = np.asarray(group).ravel()
        if g.shape[0] != y.shape[0]:
            raise ValueError("dimension mismatch between group and labels")
        if not np.isin(g, (0, 1)).all():
            raise ValueError("group must be binary (0/1)")
        g = g.astype(int)
    return y, w, g


def _logit(p):
    return math.log(p) - math.log1p(-p)


def _bern_kl(p, q):
    out = 0.0
    if p > 0:
        out += p * math.log(p / q)
    if p < 1:
        out += (1 - p) * math.log((1 - p) / (1 - q))
    return out


def prejudice_index(prob, group, weights=None):
    """Prejudice index and its derivative with respect to each probability.

    ``PI = sum_a pi_a * KL(Bern(P_a) || Bern(P))`` where ``P_a`` is the
    weighted mean predicted probability within group ``a``, ``P`` the overall
    one and ``pi_a`` the group's weight share. This equals the mutual
    information between group and predicted label.
    """
    p = np.clip(np.asarray(prob, dtype=float), _EPS, 1 - _EPS)
    g = np.asarray(group).astype(int)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    total = w.sum()
    P = float((w * p).sum() / total)
    pi = 0.0
    dpi = np.zeros_like(p)
    for a in (0, 1):
        m = g == a
        wa = w[m].sum()
        if wa == 0:
            continue
        Pa = float((w[m] * p[m]).sum() / wa)
        share = wa / total
        pi += share * _bern_kl(Pa, P)
        dpi[m] = share * (_logit(Pa) - _logit(P)) * w[m] / wa
    return pi, dpi


def _objective_z(z, y, w, g, eta):
    """Objective terms that depend on the logits ``z``.

    Returns (value, d value / dz, per-row curvature of the log-loss part,
    callback producing the PI Hessian given the Jacobian rows).
    """
    W = w.sum()
    p = expit(z)
    nll = float(np.sum(w * (np.logaddexp(0.0, z) - y * z)) / W)
    dz = w * (p - y) / W
    curv = w * p * (1 - p) / W
    if eta <= 0:
        return nll, dz, curv, None
    pi, dpi = prejudice_index(p, g, w)
    s = p * (1 - p)
    dz = dz + eta * dpi * s
    return nll + eta * pi, dz, curv, (p, dpi)


def _pi_hessian(Xa, p, dpi, g, w, eta):
    """Exact Hessian of ``eta * PI`` for a linear model with design ``Xa``."""
    W = w.sum()
    s = p * (1 - p)
    pc = np.clip(p, _EPS, 1 - _EPS)
    P = float((w * pc).sum() / W)
    H = (Xa * (eta * dpi * s * (1 - 2 * p))[:, None]).T @ Xa
    grad_P = np.zeros(Xa.shape[1])
    for a in (0, 1):
        m = g == a
        wa = w[m].sum()
        if wa == 0:
            continue
        Pa = float((w[m] * pc[m]).sum() / wa)
        v = Xa[m].T @ (w[m] * s[m]) / wa
        H += eta * (wa / W) * np.outer(v, v) / (Pa * (1 - Pa))
        grad_P += (wa / W) * v
    H -= eta * np.outer(grad_P, grad_P) / (P * (1 - P))
    return H


# ----------------------------------------------------------------------------
# logistic regression
# ----------------------------------------------------------------------------

def _glm_objective(theta, Xa, y, w, g, config, hessian=False):
    z = Xa @ theta
    f, dz, curv, pi_state = _objective_z(z, y, w, g, config.pr_eta)
    coef = theta[1:]
    f += 0.5 * config.l2 * float(coef @ coef)
    grad = Xa.T @ dz
    grad[1:] += config.l2 * coef
    if not hessian:
        return f, grad, None
    H = (Xa * curv[:, None]).T @ Xa
    H[1:, 1:] += config.l2 * np.eye(Xa.shape[1] - 1)
    if pi_state is not None:
        p, dpi = pi_state
        H += _pi_hessian(Xa, p, dpi, g, w, config.pr_eta)
    return f, grad, H


def _newton_direction(grad, H):
    """Solve H d = grad, damping H until it is positive definite."""
    scale = max(float(np.trace(H)) / H.shape[0], 1e-12)
    mu = 0.0
    for _ in range(12):
        try:
            L = np.linalg.cholesky(H + mu * np.eye(H.shape[0]))
        except np.linalg.LinAlgError:
            mu = scale * 1e-8 if mu == 0.0 else mu * 10.0
            continue
        return np.linalg.solve(L.T, np.linalg.solve(L, grad))
    return grad  # plain gradient step


def fit_logistic(design, labels, group=None, config: TrainConfig | None = None) -> GlmModel:
    """Weighted, L2-regularised logistic regression fitted by damped Newton.

    Parameters
    ----------
    design : EncodedMatrix or (n, p) array
    labels : (n,) 0/1 vector
    group : (n,) 0/1 vector, required when ``config.pr_eta > 0``
    config : TrainConfig

    The returned model records ``converged`` (gradient max-norm reached
    ``tol``), the iteration count and the objective at every accepted
    iterate.
    """
    config = config or TrainConfig()
    X, names = _as_design(design)
    y, w, g = _check_inputs(X, labels, group, config)
    Xa = np.hstack([np.ones((X.shape[0], 1)), X])
    theta = np.zeros(Xa.shape[1])
    f, grad, H = _glm_objective(theta, Xa, y, w, g, config, hessian=True)
    trace = [f]
    converged = bool(np.max(np.abs(grad)) <= config.tol)
    n_iter = 0
    while not converged and n_iter < config.max_iter:
        d = _newton_direction(grad, H)
        slope = float(grad @ d)
        t = 1.0
        for _ in range(60):
            cand = theta - t * d
            f_new, _, _ = _glm_objective(cand, Xa, y, w, g, config)
            # second clause: accept steps whose change is at rounding level
            if f_new <= f - 1e-4 * t * slope or f_new - f <= 1e-15 * abs(f):
                break
            t *= 0.5
        else:
            break
        theta = cand
        n_iter += 1
        f, grad, H = _glm_objective(theta, Xa, y, w, g, config, hessian=True)
        trace.append(f)
        converged = bool(np.max(np.abs(grad)) <= config.tol)
    return GlmModel(
        coefficients=theta[1:], intercept=theta[0], feature_names=names or (),
        converged=converged, n_iter=n_iter, trace=tuple(trace), config=config,
    )


# ----------------------------------------------------------------------------
# MLP
# ----------------------------------------------------------------------------

def _mlp_forward(model_or_params, X):
    weights, biases = model_or_params
    acts = [X]
    h = X
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = h @ W + b
        if i < len(weights) - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            return z.ravel(), acts
    raise AssertionError("unreachable")


def _mlp_backward(weights, acts, dz_out):
    """Gradients of sum_i dz_out_i * z_i with respect to every layer."""
    grads_w, grads_b = [None] * len(weights), [None] * len(weights)
    delta = dz_out[:, None]
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (1.0 - acts[i] ** 2)
    return grads_w, grads_b


def _mlp_objective(weights, biases, X, y, w, g, config):
    z, acts = _mlp_forward((weights, biases), X)
    f, dz, _, _ = _objective_z(z, y, w, g, config.pr_eta)
    gw, gb = _mlp_backward(weights, acts, dz)
    for i, W in enumerate(weights):
        f += 0.5 * config.l2 * float(np.sum(W * W))
        gw[i] = gw[i] + config.l2 * W
    return f, gw, gb


def _init_mlp(sizes, rng):
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return weights, biases


def fit_mlp(design, labels, hidden, config: TrainConfig | None = None, group=None) -> MlpModel:
    """Feed-forward network with tanh hidden layers and a sigmoid output.

    Trained by shuffled mini-batch gradient descent with momentum for
    ``config.max_iter`` epochs. ``trace`` holds the full-data objective after
    each epoch (index 0 is the initial value).
    """
    hidden = [int(h) for h in hidden]
    if not hidden:
        raise ValueError("hidden is empty; use fit_logistic for a model without hidden layers")
    if any(h < 1 for h in hidden):
        raise ValueError("hidden layer sizes must be positive")
    config = config or TrainConfig()
    X, names = _as_design(design)
    y, w, g = _check_inputs(X, labels, group, config)
    rng = np.random.default_rng(config.seed)
    sizes = (X.shape[1], *hidden, 1)
    weights, biases = _init_mlp(sizes, rng)
    vel_w = [np.zeros_like(W) for W in weights]
    vel_b = [np.zeros_like(b) for b in biases]
    n = X.shape[0]
    trace = [_mlp_objective(weights, biases, X, y, w, g, config)[0]]
    converged = False
    epoch = 0
    for epoch in range(1, config.max_iter + 1):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            gb_ = g[idx] if g is not None else None
            _, gw, gb = _mlp_objective(weights, biases, X[idx], y[idx], w[idx], gb_, config)
            for i in range(len(weights)):
                vel_w[i] = config.momentum * vel_w[i] - config.learning_rate * gw[i]
                vel_b[i] = config.momentum * vel_b[i] - config.learning_rate * gb[i]
                weights[i] = weights[i] + vel_w[i]
                biases[i] = biases[i] + vel_b[i]
        f, gw, gb = _mlp_objective(weights, biases, X, y, w, g, config)
        trace.append(f)
        if not np.isfinite(f):
            raise ConvergenceError(f"MLP training diverged at epoch {epoch}")
        gmax = max(max(np.max(np.abs(a)) for a in gw), max(np.max(np.abs(b)) for b in gb))
        if gmax <= config.tol:
            converged = True
            break
    return MlpModel(
        layer_sizes=sizes, weights=tuple(weights), biases=tuple(biases), feature_names=names or (),
        converged=converged, n_iter=epoch, trace=tuple(trace), config=config,
    )


# ----------------------------------------------------------------------------
# prediction, gradients, serialisation
# ----------------------------------------------------------------------------

def _logits(model, X):
    if X.shape[1] != model.n_features:
        raise ValueError(f"dimension mismatch: model expects {model.n_features} features, got {X.shape[1]}")
    if isinstance(model, GlmModel):
        return X @ model.coefficients + model.intercept
    if isinstance(model, MlpModel):
        return _mlp_forward((model.weights, model.biases), X)[0]
    raise TypeError(f"not a model: {type(model).__name__}")


def predict_proba(model, design) -> np.ndarray:
    """P(y = 1 | x), clipped into the open interval (0, 1)."""
    X, _ = _as_design(design)
    return np.clip(expit(_logits(model, X)), _EPS, 1 - _EPS)


def predict(model, design, threshold: float = 0.5) -> np.ndarray:
    return (predict_proba(model, design) >= threshold).astype(np.int64)


def loss_and_gradient(model, design, labels, config: TrainConfig | None = None, group=None):
    """Training objective at the model's parameters and its analytic gradient.

    The gradient is laid out like ``model.params()``: intercept first for
    logistic models, per-layer (weights, bias) for networks.
    """
    config = config or model.config
    X, _ = _as_design(design)
    if X.shape[1] != model.n_features:
        raise ValueError(f"dimension mismatch: model expects {model.n_features} features, got {X.shape[1]}")
    y, w, g = _check_inputs(X, labels, group, config)
    if isinstance(model, GlmModel):
        Xa = np.hstack([np.ones((X.shape[0], 1)), X])
        f, grad, _ = _glm_objective(model.params(), Xa, y, w, g, config)
        return f, grad
    f, gw, gb = _mlp_objective(list(model.weights), list(model.biases), X, y, w, g, config)
    return f, np.concatenate([np.concatenate([a.ravel(), b]) for a, b in zip(gw, gb)])


def model_to_dict(model) -> dict:
    if isinstance(model, GlmModel):
        parameters = {"intercept": model.intercept, "coefficients": model.coefficients.tolist()}
    else:
        parameters = {
            "layer_sizes": list(model.layer_sizes),
            "weights": [W.tolist() for W in model.weights],
            "biases": [b.tolist() for b in model.biases],
        }
    return {
        "kind": model.kind,
        "feature_names": list(model.feature_names),
        "parameters": parameters,
        "config": model.config.to_dict(),
        "converged": bool(model.converged),
        "n_iter": int(model.n_iter),
    }


def model_to_json(model) -> str:
    return json.dumps(model_to_dict(model), indent=2)


def model_from_dict(doc: dict):
    cfg = {k: v for k, v in doc.get("config", {}).items() if k != "sample_weights"}
    config = TrainConfig(**cfg)
    params = doc["parameters"]
    common = dict(feature_names=tuple(doc["feature_names"]), converged=doc["converged"],
                  n_iter=doc["n_iter"], config=config)
    if doc["kind"] == "logistic":
        return GlmModel(coefficients=params["coefficients"], intercept=params["intercept"], **common)
    if doc["kind"] == "mlp":
        return MlpModel(layer_sizes=tuple(params["layer_sizes"]),
                        weights=tuple(np.array(W) for W in params["weights"]),
                        biases=tuple(np.array(b) for b in params["biases"]), **common)
    raise ValueError(f"unknown model kind {doc['kind']!r}")


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
