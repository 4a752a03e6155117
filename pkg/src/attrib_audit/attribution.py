"""Local feature attribution methods under one contract.

Every method takes a batch ``X`` of shape ``(n, *model.input_shape)`` (a single
unbatched input is also accepted) and returns an :class:`AttributionResult`
holding signed attributions and nonnegative importance scores of the same
shape. The explained quantity is always the model's pre-sigmoid logit.

Randomised methods draw from a generator seeded by ``(seed, sample_id)``, so a
sample's attribution does not depend on which batch it was computed in.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from .models import BlackBoxModel, CapabilityError, PredictiveModel, glassbox_importance

TARGET = "logit"
_CHUNK_CELLS = 4_000_000


class AttributionError(ValueError):
    pass


@dataclass(frozen=True)
class BaselineSpec:
    """How to choose the reference input x'.

    ``uniform_random`` draws each coordinate from U[0, 1] once per sample;
    ``distribution_sample`` draws ``count`` rows from ``reference`` (or from
    U[0, 1] when no reference pool is given).
    """

    mode: str = "uniform_random"
    seed: int = 0
    vector: np.ndarray | None = None
    count: int = 1
    reference: np.ndarray | None = None

    MODES = ("zeros", "uniform_random", "fixed_vector", "distribution_sample")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise AttributionError(f"unknown baseline mode {self.mode!r}")
        if self.mode == "fixed_vector" and self.vector is None:
            raise AttributionError("fixed_vector baseline needs a vector")
        if self.count < 1:
            raise AttributionError("baseline count must be >= 1")

    def describe(self) -> str:
        if self.mode == "distribution_sample":
            return f"distribution_sample({self.count})"
        return self.mode

    def draw(self, shape: tuple[int, ...], sample_id: int, count: int | None = None) -> np.ndarray:
        """Baselines for one sample: ``(count, *shape)``."""
        count = self.count if count is None else count
        if self.mode == "zeros":
            return np.zeros((count, *shape))
        if self.mode == "fixed_vector":
            v = np.asarray(self.vector, dtype=float)
            if v.shape != tuple(shape):
                raise AttributionError(f"baseline vector shape {v.shape} does not match input {shape}")
            return np.broadcast_to(v, (count, *shape)).copy()
        rng = sample_rng(self.seed, sample_id)
        if self.mode == "distribution_sample" and self.reference is not None:
            ref = np.asarray(self.reference, dtype=float)
            if ref.shape[1:] != tuple(shape):
                raise AttributionError("reference pool shape does not match input")
            return ref[rng.integers(0, ref.shape[0], size=count)]
        return rng.random((count, *shape))


ZEROS = BaselineSpec("zeros")


@dataclass(frozen=True, eq=False)
class AttributionResult:
    signed: np.ndarray
    scores: np.ndarray
    method: str
    sample_ids: np.ndarray
    baseline: str | None = None
    seed: int | None = None
    target: str = TARGET
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.signed.shape != self.scores.shape:
            raise AttributionError("signed and abs score arrays differ in shape")
        if not (np.all(np.isfinite(self.scores)) and np.all(self.scores >= 0)):
            raise AttributionError(f"{self.method}: scores must be finite and nonnegative")

    @property
    def n_samples(self) -> int:
        return self.scores.shape[0]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.scores.shape[1:]


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(sample_id)])


def _prepare(model: PredictiveModel, X, sample_ids):
    X = np.asarray(X, dtype=float)
    if X.shape == model.input_shape:
        X = X[None]
    if X.shape[1:] != model.input_shape:
        raise AttributionError(f"input shape {X.shape} does not match model input {model.input_shape}")
    ids = np.arange(X.shape[0]) if sample_ids is None else np.asarray(sample_ids, dtype=np.int64)
    if ids.shape != (X.shape[0],):
        raise AttributionError("sample_ids must have one entry per sample")
    return X, ids


def _single_baselines(baseline: BaselineSpec, shape, ids) -> np.ndarray:
    return np.stack([baseline.draw(shape, i, count=1)[0] for i in ids])


def _logits(model: PredictiveModel, Z: np.ndarray) -> np.ndarray:
    """Batched logits in memory-bounded chunks."""
    if Z.shape[0] == 0:
        return np.zeros(0)
    per_row = max(1, int(np.prod(Z.shape[1:])))
    chunk = max(1, _CHUNK_CELLS // per_row)
    return np.concatenate([np.atleast_1d(model.logit(Z[i : i + chunk])) for i in range(0, Z.shape[0], chunk)])


def _grads(model: PredictiveModel, Z: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    per_row = max(1, int(np.prod(Z.shape[1:])))
    chunk = max(1, _CHUNK_CELLS // per_row)
    out = np.empty_like(Z)
    for i in range(0, Z.shape[0], chunk):
        ref = None if reference is None else reference[i : i + chunk]
        out[i : i + chunk] = model.input_gradient(Z[i : i + chunk], reference=ref)
    return out


def _require_gradients(model: PredictiveModel, method: str) -> None:
    if not model.gradient_capable:
        raise CapabilityError(f"{method} needs a gradient-capable model; {model.kind} is not")


def _result(method, signed, ids, baseline=None, seed=None, scores=None, **extras):
    scores = np.abs(signed) if scores is None else scores
    return AttributionResult(
        signed=signed,
        scores=scores,
        method=method,
        sample_ids=ids,
        baseline=None if baseline is None else baseline.describe() if isinstance(baseline, BaselineSpec) else baseline,
        seed=seed,
        extras=extras,
    )


# -- gradient based ----------------------------------------------------------


def saliency(model, X, sample_ids=None) -> AttributionResult:
    _require_gradients(model, "saliency")
    X, ids = _prepare(model, X, sample_ids)
    return _result("saliency", _grads(model, X), ids)


def integrated_gradients(model, X, baseline: BaselineSpec = ZEROS, steps: int = 50, sample_ids=None):
    """Path integral of gradients from x' to x over ``steps`` equal sub-intervals.

    Each sub-interval contributes its mean gradient. Models whose gradient is
    piecewise constant along straight paths (linear, one ReLU layer) supply
    that mean exactly through the secant rule, which keeps the ReLU kinks from
    biasing the sum; other models use the gradient at the sub-interval midpoint.

    ``extras['completeness_residual']`` holds ``sum(signed) - (logit(x) - logit(x'))``.
    """
    _require_gradients(model, "integrated_gradients")
    if steps < 2:
        raise AttributionError("integrated_gradients needs steps >= 2")
    X, ids = _prepare(model, X, sample_ids)
    B = _single_baselines(baseline, model.input_shape, ids)
    delta = X - B
    total = np.zeros_like(X)
    exact = getattr(model, "exact_segment_gradient", False)
    for k in range(steps):
        if exact:
            total += _grads(model, B + ((k + 1) / steps) * delta, reference=B + (k / steps) * delta)
        else:
            total += _grads(model, B + ((k + 0.5) / steps) * delta)
    signed = delta * total / steps
    axes = tuple(range(1, X.ndim))
    residual = signed.sum(axis=axes) - (_logits(model, X) - _logits(model, B))
    return _result("integrated_gradients", signed, ids, baseline, baseline.seed, completeness_residual=residual)


def deeplift(model, X, baseline: BaselineSpec = ZEROS, sample_ids=None):
    """Rescale-rule DeepLift: secant-slope multipliers composed through the layer graph."""
    if isinstance(model, BlackBoxModel) or not model.gradient_capable:
        raise CapabilityError(f"deeplift needs a built-in layered model; got {model.kind}")
    X, ids = _prepare(model, X, sample_ids)
    B = _single_baselines(baseline, model.input_shape, ids)
    signed = (X - B) * _grads(model, X, reference=B)
    return _result("deeplift", signed, ids, baseline, baseline.seed)


def gradient_shap(
    model,
    X,
    baselines: BaselineSpec = BaselineSpec("uniform_random", count=10),
    n_samples: int = 20,
    noise_sd: float = 0.1,
    seed: int = 0,
    sample_ids=None,
):
    """Expected gradient at random points between a noisy input and sampled baselines."""
    _require_gradients(model, "gradient_shap")
    if n_samples < 1:
        raise AttributionError("gradient_shap needs n_samples >= 1")
    X, ids = _prepare(model, X, sample_ids)
    shape = model.input_shape
    signed = np.empty_like(X)
    for i, sid in enumerate(ids):
        pool = baselines.draw(shape, sid) if isinstance(baselines, BaselineSpec) else np.asarray(baselines, float)
        rng = sample_rng(seed, sid)
        pick = rng.integers(0, pool.shape[0], size=n_samples)
        eps = rng.normal(0.0, noise_sd, size=(n_samples, *shape)) if noise_sd > 0 else 0.0
        alpha = rng.random(n_samples).reshape((n_samples,) + (1,) * len(shape))
        B = pool[pick]
        points = B + alpha * (X[i] + eps - B)
        g = _grads(model, points)
        signed[i] = (g * (X[i] - B)).mean(axis=0)
    desc = baselines.describe() if isinstance(baselines, BaselineSpec) else "explicit"
    return _result("gradient_shap", signed, ids, desc, seed)


def deeplift_shap(model, X, baselines=BaselineSpec("uniform_random", count=10), sample_ids=None):
    """Mean DeepLift attribution over a set of baselines.

    ``baselines`` is a :class:`BaselineSpec` (``count`` draws per sample) or an
    explicit array of shape ``(m, *input_shape)`` used as-is for every sample.
    """
    if isinstance(model, BlackBoxModel) or not model.gradient_capable:
        raise CapabilityError(f"deeplift_shap needs a built-in layered model; got {model.kind}")
    X, ids = _prepare(model, X, sample_ids)
    shape = model.input_shape
    signed = np.empty_like(X)
    for i, sid in enumerate(ids):
        pool = baselines.draw(shape, sid) if isinstance(baselines, BaselineSpec) else np.asarray(baselines, float)
        xi = np.broadcast_to(X[i], pool.shape)
        signed[i] = ((xi - pool) * _grads(model, np.ascontiguousarray(xi), reference=pool)).mean(axis=0)
    desc = baselines.describe() if isinstance(baselines, BaselineSpec) else "explicit"
    seed = baselines.seed if isinstance(baselines, BaselineSpec) else None
    return _result("deeplift_shap", signed, ids, desc, seed)


def smoothgrad_saliency(model, X, noise_sd: float = 0.1, n_samples: int = 20, seed: int = 0, sample_ids=None):
    """Saliency averaged over Gaussian perturbations of the input.

    Scores are the mean of ``|gradient|``; the signed array is the mean gradient.
    """
    _require_gradients(model, "smoothgrad_saliency")
    X, ids = _prepare(model, X, sample_ids)
    shape = model.input_shape
    signed = np.empty_like(X)
    scores = np.empty_like(X)
    for i, sid in enumerate(ids):
        rng = sample_rng(seed, sid)
        noisy = X[i] + (rng.normal(0.0, noise_sd, size=(n_samples, *shape)) if noise_sd > 0 else 0.0)
        g = _grads(model, np.broadcast_to(noisy, (n_samples, *shape)).copy())
        signed[i] = g.mean(axis=0)
        scores[i] = np.abs(g).mean(axis=0)
    return _result("smoothgrad_saliency", signed, ids, seed=seed, scores=scores)


# -- perturbation based ------------------------------------------------------


def _permutation_logits(model, x, b, perms):
    """Logits along the baseline -> input path that switches features in permutation order."""
    m, d = perms.shape
    rank = np.empty_like(perms)
    rank[np.arange(m)[:, None], perms] = np.arange(d)
    # on[m, k, j]: feature j already switched after k steps
    on = rank[:, None, :] < np.arange(d + 1)[None, :, None]
    xf, bf = x.ravel(), b.ravel()
    Z = np.where(on, xf, bf).reshape(m * (d + 1), *x.shape)
    return _logits(model, Z).reshape(m, d + 1), rank


def shapley_sampling(
    model,
    X,
    baseline: BaselineSpec = ZEROS,
    n_permutations: int = 25,
    seed: int = 0,
    enumerate_all: bool = False,
    sample_ids=None,
):
    """Average marginal logit change of each feature over random orderings.

    With ``enumerate_all`` every one of the d! orderings is used once, which
    yields the exact Shapley value. ``extras['stderr']`` holds the per-feature
    standard error of the sampled mean.
    """
    X, ids = _prepare(model, X, sample_ids)
    shape = model.input_shape
    d = int(np.prod(shape))
    if enumerate_all:
        if d > 9:
            raise AttributionError(f"full enumeration of {d}! orderings is not supported (d <= 9)")
        all_perms = np.array(list(itertools.permutations(range(d))), dtype=np.int64)
    elif n_permutations < 1:
        raise AttributionError("shapley_sampling needs n_permutations >= 1")
    B = _single_baselines(baseline, shape, ids)
    signed = np.empty_like(X)
    stderr = np.empty_like(X)
    per_batch = max(1, _CHUNK_CELLS // ((d + 1) * d))
    for i, sid in enumerate(ids):
        if enumerate_all:
            perms = all_perms
        else:
            rng = sample_rng(seed, sid)
            perms = np.stack([rng.permutation(d) for _ in range(n_permutations)])
        total = np.zeros(d)
        total_sq = np.zeros(d)
        for s in range(0, perms.shape[0], per_batch):
            p = perms[s : s + per_batch]
            logits, rank = _permutation_logits(model, X[i], B[i], p)
            steps = np.diff(logits, axis=1)  # steps[m, k]: gain from the k-th switched feature
            contrib = np.take_along_axis(steps, rank, axis=1)
            total += contrib.sum(axis=0)
            total_sq += (contrib**2).sum(axis=0)
        m = perms.shape[0]
        mean = total / m
        var = np.maximum(total_sq / m - mean**2, 0.0) * (m / (m - 1) if m > 1 else 0.0)
        signed[i] = mean.reshape(shape)
        stderr[i] = np.sqrt(var / m).reshape(shape)
    return _result("shapley_sampling", signed, ids, baseline, seed, stderr=stderr)


def feature_permutation(model, X, seed: int = 0, sample_ids=None):
    """Shuffle each cell across the batch and record the per-sample logit change.

    Each cell gets its own seeded permutation of the batch; the identity
    permutation is rejected and redrawn.
    """
    X, ids = _prepare(model, X, sample_ids)
    n = X.shape[0]
    if n < 2:
        raise AttributionError("feature_permutation needs a batch of at least 2 samples")
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, n])
    base = _logits(model, X)
    flat = X.reshape(n, -1)
    signed = np.empty_like(flat)
    identity = np.arange(n)
    for j in range(flat.shape[1]):
        perm = rng.permutation(n)
        while np.array_equal(perm, identity):
            perm = rng.permutation(n)
        Z = flat.copy()
        Z[:, j] = flat[perm, j]
        signed[:, j] = base - _logits(model, Z.reshape(X.shape))
    return _result("feature_permutation", signed.reshape(X.shape), ids, seed=seed)


def _single_cell_logits(model, x, values):
    """Logits of ``x`` with one cell at a time replaced by ``values`` (same shape as x)."""
    d = x.size
    Z = np.broadcast_to(x.ravel(), (d, d)).copy()
    Z[np.arange(d), np.arange(d)] = values.ravel()
    return _logits(model, Z.reshape(d, *x.shape)).reshape(x.shape)


def feature_ablation(model, X, baseline: BaselineSpec = ZEROS, sample_ids=None):
    """``logit(x) - logit(x with cell i set to its baseline value)`` for every cell."""
    X, ids = _prepare(model, X, sample_ids)
    B = _single_baselines(baseline, model.input_shape, ids)
    base = _logits(model, X)
    signed = np.stack([base[i] - _single_cell_logits(model, X[i], B[i]) for i in range(X.shape[0])])
    return _result("feature_ablation", signed, ids, baseline, baseline.seed)


def occlusion(model, X, window=(1, 1), baseline: BaselineSpec = ZEROS, sample_ids=None):
    """Slide a rectangular window (stride 1) replacing the region by the baseline.

    Each cell scores the mean ``|logit change|`` over the windows covering it;
    the signed array holds the mean signed change.
    """
    X, ids = _prepare(model, X, sample_ids)
    shape = model.input_shape
    window = (int(window),) if np.isscalar(window) else tuple(int(w) for w in window)
    if len(shape) == 1 and len(window) == 2:
        if window[0] != 1:
            raise AttributionError("tabular input: window must be (1, f_len) or (f_len,)")
        window = window[1:]
    if len(window) != len(shape):
        raise AttributionError(f"window {window} does not match input rank {len(shape)}")
    if any(w < 1 or w > s for w, s in zip(window, shape)):
        raise AttributionError(f"window {window} must satisfy 1 <= window <= input shape {shape}")
    B = _single_baselines(baseline, shape, ids)
    starts = list(itertools.product(*(range(s - w + 1) for s, w in zip(shape, window))))
    masks = np.zeros((len(starts), *shape), dtype=bool)
    for k, st in enumerate(starts):
        masks[(k, *(slice(a, a + w) for a, w in zip(st, window)))] = True
    coverage = masks.sum(axis=0)
    base = _logits(model, X)
    signed = np.empty_like(X)
    scores = np.empty_like(X)
    for i in range(X.shape[0]):
        Z = np.where(masks, B[i], X[i])
        delta = base[i] - _logits(model, Z)
        signed[i] = np.tensordot(delta, masks, axes=1) / coverage
        scores[i] = np.tensordot(np.abs(delta), masks, axes=1) / coverage
    return _result("occlusion", signed, ids, baseline, baseline.seed, scores=scores, window=window)


def arch_detect(model, X, sample_ids=None):
    """Squared difference quotient ``((M(x_i e_i) - M(0)) / x_i)^2`` with zero context.

    Where ``x_i`` is (numerically) zero the quotient is replaced by the exact
    partial derivative at the all-zero input, or 0 for models without
    gradients. The signed array holds the unsquared quotient.
    """
    X, ids = _prepare(model, X, sample_ids)
    zero = np.zeros(model.input_shape)
    m0 = float(_logits(model, zero[None])[0])
    if model.gradient_capable:
        grad0 = model.input_gradient(zero)
    else:
        grad0 = np.zeros(model.input_shape)
    signed = np.empty_like(X)
    for i in range(X.shape[0]):
        x = X[i]
        single = _single_cell_logits(model, zero, x)
        small = np.abs(x) < 1e-9
        with np.errstate(invalid="ignore", divide="ignore"):
            q = (single - m0) / np.where(small, 1.0, x)
        signed[i] = np.where(small, grad0, q)
    return _result("arch_detect", signed, ids, "zeros", scores=signed**2)


# -- baselines ---------------------------------------------------------------


def random_attribution(shape, seed: int = 0, sample_ids=(0,)):
    """Scores are a seeded random permutation of 1..d, giving a uniform random ranking."""
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    ids = np.asarray(sample_ids, dtype=np.int64)
    d = int(np.prod(shape))
    scores = np.stack([(sample_rng(seed, sid).permutation(d) + 1.0).reshape(shape) for sid in ids])
    return _result("random", scores, ids, seed=seed)


def glassbox(model, X, sample_ids=None):
    X, ids = _prepare(model, X, sample_ids)
    s = glassbox_importance(model, X)
    return _result("glassbox", s, ids)


METHODS = (
    "saliency",
    "integrated_gradients",
    "deeplift",
    "gradient_shap",
    "deeplift_shap",
    "smoothgrad_saliency",
    "shapley_sampling",
    "feature_permutation",
    "feature_ablation",
    "occlusion",
    "arch_detect",
)
BASELINE_METHODS = ("random", "glassbox")
ALL_METHODS = METHODS + BASELINE_METHODS


def attribute(method: str, model: PredictiveModel, X, seed: int = 0, sample_ids=None, **options) -> AttributionResult:
    """Dispatch by method name with uniform seeding.

    Methods that take a baseline default to the per-sample U[0, 1] baseline
    seeded by ``seed``; arch_detect always uses the zero baseline.
    """
    X, ids = _prepare(model, X, sample_ids)
    if method == "random":
        return random_attribution(model.input_shape, seed, ids)
    if method == "glassbox":
        return glassbox(model, X, ids)
    if method not in METHODS:
        raise AttributionError(f"unknown attribution method {method!r}")
    fn = globals()[method]
    if method in ("integrated_gradients", "deeplift", "feature_ablation", "occlusion", "shapley_sampling"):
        options.setdefault("baseline", BaselineSpec("uniform_random", seed=seed))
    if method in ("gradient_shap", "deeplift_shap"):
        options.setdefault("baselines", BaselineSpec("uniform_random", seed=seed, count=10))
    if method in ("gradient_shap", "smoothgrad_saliency", "shapley_sampling", "feature_permutation"):
        options.setdefault("seed", seed)
    return fn(model, X, sample_ids=ids, **options)


def write_attribution_csv(result: AttributionResult, path, feature_names=None) -> None:
    """Dump as ``sample_id,timestep,feature,signed_score,abs_score,method,seed`` rows.

    Tabular results leave ``timestep`` empty.
    """
    shape = result.input_shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "timestep", "feature", "signed_score", "abs_score", "method", "seed"])
        seed = "" if result.seed is None else result.seed
        for k, sid in enumerate(result.sample_ids):
            signed = result.signed[k].reshape(-1, shape[-1])
            scores = result.scores[k].reshape(-1, shape[-1])
            for t in range(signed.shape[0]):
                ts = t if len(shape) > 1 else ""
                for j in range(shape[-1]):
                    name = feature_names[j] if feature_names is not None else j
                    w.writerow([int(sid), ts, name, repr(float(signed[t, j])), repr(float(scores[t, j])), result.method, seed])



def read_attribution_csv(path, feature_names, n_timesteps: int | None = None) -> AttributionResult:
    """Inverse of :func:`write_attribution_csv`; ``n_timesteps=None`` means tabular rows."""
    col = {name: j for j, name in enumerate(feature_names)}
    rows: dict[int, list] = {}
    method = seed = None
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for line, row in enumerate(reader, start=2):
            try:
                sid = int(row["sample_id"])
                j = col[row["feature"]]
                t = int(row["timestep"]) if n_timesteps is not None else 0
                signed, score = float(row["signed_score"]), float(row["abs_score"])
            except (KeyError, ValueError, TypeError) as exc:
                raise AttributionError(f"{path}:{line}: malformed attribution row ({exc})") from None
            if method is None:
                method, seed = row["method"], row["seed"]
            rows.setdefault(sid, []).append((t, j, signed, score))
    if not rows:
        raise AttributionError(f"{path}: no attribution rows")
    shape = (len(feature_names),) if n_timesteps is None else (n_timesteps, len(feature_names))
    ids = np.array(sorted(rows), dtype=np.int64)
    signed = np.zeros((ids.size,) + shape)
    scores = np.zeros_like(signed)
    for k, sid in enumerate(ids):
        for t, j, s, a in rows[sid]:
            idx = (k, j) if n_timesteps is None else (k, t, j)
            signed[idx], scores[idx] = s, a
    return AttributionResult(signed, scores, method, ids, seed=int(seed) if seed else None)
