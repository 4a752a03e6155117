"""Small binary classifiers with exact hand-written gradients.

Every model maps an input of shape ``input_shape`` to a scalar logit. Inputs
are standardised by a fixed affine map stored with the model, so gradients
are reported with respect to the raw input.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import expit

from .metrics import UndefinedMetricError, auroc

CHECKPOINT_VERSION = 1
SECANT_EPS = 1e-9


class CapabilityError(TypeError):
    """Raised when a method needs a model capability (gradients, glassbox) it lacks."""


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 64
    hidden: int = 16
    l2: float = 1e-4
    momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if self.learning_rate <= 0 or self.epochs < 1 or self.batch_size < 1 or self.hidden < 1:
            raise ValueError("learning_rate, epochs, batch_size and hidden must be positive")
        if self.l2 < 0 or not 0 <= self.momentum < 1:
            raise ValueError("l2 must be >= 0 and momentum in [0, 1)")


def _slopes(act: str, a: np.ndarray, a_ref: np.ndarray | None) -> np.ndarray:
    """Local derivative of the activation, or the secant slope against a reference."""
    if act == "relu":
        deriv = (a > 0).astype(float)
        f = lambda z: np.maximum(z, 0.0)  # noqa: E731
    else:
        deriv = 1.0 - np.tanh(a) ** 2
        f = np.tanh
    if a_ref is None:
        return deriv
    diff = a - a_ref
    close = np.abs(diff) < SECANT_EPS
    with np.errstate(invalid="ignore", divide="ignore"):
        secant = (f(a) - f(a_ref)) / np.where(close, 1.0, diff)
    return np.where(close, deriv, secant)


class PredictiveModel:
    kind = "abstract"
    gradient_capable = True
    glassbox = False
    # input_gradient(b, reference=a) is the exact mean gradient over the segment [a, b]
    # when every pre-activation is affine along straight paths (at most one ReLU layer)
    exact_segment_gradient = False
    param_names: tuple[str, ...] = ()

    def __init__(self, params, input_shape, shift=None, scale=None, train_mean=None, config=None):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.params = {}
        for name in self.param_names:
            arr = np.array(params[name], dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"parameter {name} is not finite")
            arr.setflags(write=False)
            self.params[name] = arr
        shape = self.input_shape
        self.shift = self._frozen(np.zeros(shape) if shift is None else shift, shape)
        self.scale = self._frozen(np.ones(shape) if scale is None else scale, shape)
        self.train_mean = self._frozen(self.shift if train_mean is None else train_mean, shape)
        self.config = config
        self.history: list[float] = []

    @staticmethod
    def _frozen(arr, shape):
        out = np.broadcast_to(np.asarray(arr, dtype=float), shape).copy()
        out.setflags(write=False)
        return out

    def __repr__(self):
        return f"{type(self).__name__}(input_shape={self.input_shape})"

    def _batch(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape == self.input_shape:
            return x[None], True
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape} does not match model input {self.input_shape}")
        return x, False

    def _standardize(self, X):
        return (X - self.shift) / self.scale

    def logit(self, x):
        X, single = self._batch(x)
        z = self._logits(self._standardize(X))
        return float(z[0]) if single else z

    def predict_proba(self, x):
        return expit(self.logit(x))

    def input_gradient(self, x, reference=None):
        """Exact gradient of the logit w.r.t. each raw input cell.

        With ``reference`` the activation derivatives are replaced by secant
        slopes between the input and reference activations (rescale rule);
        multiplying the result by ``x - reference`` gives DeepLift scores.
        """
        if not self.gradient_capable:
            raise CapabilityError(f"{self.kind} model does not expose input gradients")
        X, single = self._batch(x)
        U = self._standardize(X)
        U_ref = None
        if reference is not None:
            R, _ = self._batch(reference)
            U_ref = self._standardize(np.broadcast_to(R, X.shape))
        g = self._input_grad(U, U_ref) / self.scale
        return g[0] if single else g

    # subclasses
    def _logits(self, U):
        raise NotImplementedError

    def _input_grad(self, U, U_ref):
        raise NotImplementedError

    def with_params(self, params):
        return type(self)(params, self.input_shape, self.shift, self.scale, self.train_mean, self.config)

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": self.kind,
            "input_shape": list(self.input_shape),
            "capabilities": {"gradient_capable": self.gradient_capable, "glassbox": self.glassbox},
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
            "shift": self.shift.ravel().tolist(),
            "scale": self.scale.ravel().tolist(),
            "train_mean": self.train_mean.ravel().tolist(),
            "config": None if self.config is None else asdict(self.config),
        }


class LinearModel(PredictiveModel):
    kind = "linear"
    glassbox = True
    exact_segment_gradient = True
    param_names = ("w", "b")

    @classmethod
    def from_weights(cls, w, b=0.0):
        w = np.asarray(w, dtype=float)
        return cls({"w": w, "b": b}, w.shape)

    @property
    def raw_weights(self) -> np.ndarray:
        return self.params["w"] / self.scale

    def _logits(self, U):
        n = U.shape[0]
        return U.reshape(n, -1) @ self.params["w"].ravel() + self.params["b"]

    def _input_grad(self, U, U_ref):
        return np.broadcast_to(self.params["w"], U.shape).copy()

    def glassbox_importance(self, x):
        """``|w_i * (x_i - train_mean_i)|`` in raw input units."""
        X, single = self._batch(x)
        s = np.abs(self.raw_weights * (X - self.train_mean))
        return s[0] if single else s


class FeedForwardModel(PredictiveModel):
    """One hidden ReLU layer on the flattened input."""

    exact_segment_gradient = True

    kind = "feedforward"
    param_names = ("W1", "b1", "v", "c")

    def _hidden(self, U, p=None):
        p = p or self.params
        return U.reshape(U.shape[0], -1) @ p["W1"] + p["b1"]

    def _logits(self, U):
        a = self._hidden(U)
        return np.maximum(a, 0.0) @ self.params["v"] + self.params["c"]

    def _input_grad(self, U, U_ref):
        a = self._hidden(U)
        S = _slopes("relu", a, None if U_ref is None else self._hidden(U_ref))
        return ((S * self.params["v"]) @ self.params["W1"].T).reshape(U.shape)


class RecurrentModel(PredictiveModel):
    """Single-layer tanh recurrent cell, mean-pooled over time, linear head."""

    kind = "recurrent"
    param_names = ("Wx", "Wh", "b", "v", "c")

    def _forward(self, U, p=None):
        p = p or self.params
        n, T, _ = U.shape
        H = p["Wh"].shape[0]
        A = np.empty((n, T, H))
        Hs = np.empty((n, T, H))
        h = np.zeros((n, H))
        proj = U @ p["Wx"] + p["b"]
        for t in range(T):
            a = proj[:, t] + h @ p["Wh"]
            h = np.tanh(a)
            A[:, t] = a
            Hs[:, t] = h
        return A, Hs

    def _logits(self, U):
        _, Hs = self._forward(U)
        return Hs.mean(axis=1) @ self.params["v"] + self.params["c"]

    def _backward(self, p, U, dz, S, Hs, want_params):
        n, T, _ = U.shape
        dpool = dz[:, None] * p["v"] / T
        dA = np.empty_like(S)
        dh_next = np.zeros_like(dpool)
        for t in range(T - 1, -1, -1):
            da = (dpool + dh_next) * S[:, t]
            dA[:, t] = da
            dh_next = da @ p["Wh"].T
        dU = dA @ p["Wx"].T
        if not want_params:
            return dU, None
        H_prev = np.concatenate([np.zeros((n, 1, Hs.shape[2])), Hs[:, :-1]], axis=1)
        grads = {
            "Wx": np.einsum("ntf,nth->fh", U, dA),
            "Wh": np.einsum("ntk,nth->kh", H_prev, dA),
            "b": dA.sum(axis=(0, 1)),
            "v": Hs.mean(axis=1).T @ dz,
            "c": np.asarray(dz.sum()),
        }
        return dU, grads

    def _input_grad(self, U, U_ref):
        A, Hs = self._forward(U)
        A_ref = None if U_ref is None else self._forward(U_ref)[0]
        S = _slopes("tanh", A, A_ref)
        dU, _ = self._backward(self.params, U, np.ones(U.shape[0]), S, Hs, want_params=False)
        return dU


class BlackBoxModel(PredictiveModel):
    """Wraps an arbitrary batched logit function; no gradients, no layer access."""

    kind = "blackbox"
    gradient_capable = False

    def __init__(self, fn, input_shape):
        super().__init__({}, input_shape)
        self._fn = fn

    def _logits(self, U):
        return np.asarray(self._fn(U), dtype=float)


MODEL_KINDS = {"linear": LinearModel, "feedforward": FeedForwardModel, "recurrent": RecurrentModel}


# -- training ---------------------------------------------------------------


def _init_params(kind, input_shape, hidden, rng):
    def unif(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    d = int(np.prod(input_shape))
    if kind == "linear":
        return {"w": unif(input_shape, d), "b": np.asarray(0.0)}
    if kind == "feedforward":
        return {"W1": unif((d, hidden), d), "b1": np.zeros(hidden), "v": unif(hidden, hidden), "c": np.asarray(0.0)}
    F = input_shape[-1]
    return {
        "Wx": unif((F, hidden), F),
        "Wh": unif((hidden, hidden), hidden),
        "b": np.zeros(hidden),
        "v": unif(hidden, hidden),
        "c": np.asarray(0.0),
    }


def _logits_and_grads(kind, p, U, y):
    """Mean logistic loss, logits and parameter gradients for one batch."""
    n = U.shape[0]
    if kind == "linear":
        flat = U.reshape(n, -1)
        z = flat @ p["w"].ravel() + p["b"]
        dz = (expit(z) - y) / n
        grads = {"w": (flat.T @ dz).reshape(p["w"].shape), "b": np.asarray(dz.sum())}
    elif kind == "feedforward":
        flat = U.reshape(n, -1)
        a = flat @ p["W1"] + p["b1"]
        h = np.maximum(a, 0.0)
        z = h @ p["v"] + p["c"]
        dz = (expit(z) - y) / n
        da = (dz[:, None] * p["v"]) * (a > 0)
        grads = {"W1": flat.T @ da, "b1": da.sum(axis=0), "v": h.T @ dz, "c": np.asarray(dz.sum())}
    else:
        rec = RecurrentModel.__new__(RecurrentModel)
        A, Hs = rec._forward(U, p)
        z = Hs.mean(axis=1) @ p["v"] + p["c"]
        dz = (expit(z) - y) / n
        _, grads = rec._backward(p, U, dz, 1.0 - Hs**2, Hs, want_params=True)
    loss = np.mean(np.logaddexp(0.0, z) - y * z)
    return loss, z, grads


_WEIGHT_PARAMS = {"w", "W1", "v", "Wx", "Wh"}


def _as_array(data):
    if hasattr(data, "Xs"):
        return np.asarray(data.Xs, dtype=float)
    if hasattr(data, "X"):
        return np.asarray(data.X, dtype=float)
    return np.asarray(data, dtype=float)


def standardization(X: np.ndarray):
    """Per-feature (last axis) mean and std over samples and time."""
    axes = tuple(range(X.ndim - 1))
    mu = X.mean(axis=axes)
    sd = X.std(axis=axes)
    sd = np.where(sd < 1e-12, 1.0, sd)
    shape = X.shape[1:]
    return np.broadcast_to(mu, shape), np.broadcast_to(sd, shape)


def train(kind: str, data, labels, config: TrainConfig, val_data=None, val_labels=None) -> PredictiveModel:
    """Mini-batch gradient descent with momentum on the mean logistic loss.

    When validation data is supplied the parameters from the epoch with the
    best validation AUROC are returned.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}")
    config.validate()
    X = _as_array(data)
    y = np.asarray(labels, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ValueError("data and labels disagree on the number of samples")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be binary")
    if kind == "recurrent" and X.ndim != 3:
        raise ValueError("recurrent model needs sequential input of shape (N, T, F)")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data contains non-finite values")

    input_shape = X.shape[1:]
    shift, scale = standardization(X)
    rng = np.random.default_rng(config.seed)
    params = _init_params(kind, input_shape, config.hidden, rng)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    U = (X - shift) / scale

    def build(p):
        return MODEL_KINDS[kind](p, input_shape, shift, scale, X.mean(axis=0), config)

    Xv = yv = None
    if val_data is not None:
        Xv = _as_array(val_data)
        yv = np.asarray(val_labels).ravel()
    best, best_auc = None, -np.inf
    history = []
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                _, _, grads = _logits_and_grads(kind, params, U[idx], y[idx])
            for k in params:
                g = grads[k] + (config.l2 * params[k] if k in _WEIGHT_PARAMS else 0.0)
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * g
                params[k] = params[k] + velocity[k]
        with np.errstate(over="ignore", invalid="ignore"):
            loss, _, _ = _logits_and_grads(kind, params, U, y)
            loss += 0.5 * config.l2 * sum(float(np.sum(params[k] ** 2)) for k in params if k in _WEIGHT_PARAMS)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(v)) for v in params.values()):
            raise TrainingError(
                f"non-finite training loss at epoch {epoch + 1}; "
                f"learning_rate={config.learning_rate} is probably too large"
            )
        history.append(float(loss))
        if Xv is not None:
            try:
                score = auroc(build(params).logit(Xv), yv)
            except UndefinedMetricError:
                score = None
            if score is not None and score > best_auc:
                best_auc = score
                best = {k: v.copy() for k, v in params.items()}
    model = build(best if best is not None else params)
    model.history = history
    return model


def predict_proba(model: PredictiveModel, inputs):
    return model.predict_proba(inputs)


def input_gradient(model: PredictiveModel, x):
    return model.input_gradient(x)


def glassbox_importance(model: PredictiveModel, x):
    if not model.glassbox:
        raise CapabilityError(f"{model.kind} model has no glassbox importance")
    return model.glassbox_importance(x)


def evaluate(model: PredictiveModel, data, labels) -> dict[str, float]:
    from .metrics import auprc

    scores = model.logit(_as_array(data))
    return {"auprc": auprc(scores, labels), "auroc": auroc(scores, labels)}


def save_model(model: PredictiveModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> PredictiveModel:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    cls = MODEL_KINDS.get(doc["kind"])
    if cls is None:
        raise ValueError(f"{path}: unknown model kind {doc['kind']!r}")
    shape = tuple(doc["input_shape"])
    params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
    cfg = None if doc.get("config") is None else TrainConfig(**doc["config"])
    return cls(
        params,
        shape,
        np.reshape(doc["shift"], shape),
        np.reshape(doc["scale"], shape),
        np.reshape(doc["train_mean"], shape),
        cfg,
    )
