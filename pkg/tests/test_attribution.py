import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attrib_audit.attribution import (
    ALL_METHODS,
    METHODS,
    ZEROS,
    AttributionError,
    AttributionResult,
    BaselineSpec,
    arch_detect,
    attribute,
    deeplift,
    deeplift_shap,
    feature_ablation,
    feature_permutation,
    gradient_shap,
    integrated_gradients,
    occlusion,
    random_attribution,
    read_attribution_csv,
    saliency,
    shapley_sampling,
    smoothgrad_saliency,
    write_attribution_csv,
)
from attrib_audit.models import BlackBoxModel, CapabilityError, FeedForwardModel, LinearModel
from conftest import random_models
from oracles import brute_permutation_shapley, deeplift_two_layer, exact_shapley, fd_gradient, rel_err

W = np.array([2.0, -1.0, 0.0])
LIN = LinearModel.from_weights(W, 0.5)
ONES = np.ones(3)


def relu_net(d=4, hidden=6, seed=0):
    rng = np.random.default_rng(seed)
    p = {"W1": rng.normal(size=(d, hidden)), "b1": rng.normal(size=hidden), "v": rng.normal(size=hidden), "c": np.asarray(0.2)}
    return FeedForwardModel(p, (d,)), p


# -- linear closed forms -----------------------------------------------------------


def test_saliency_linear():
    assert np.array_equal(saliency(LIN, ONES).scores[0], [2.0, 1.0, 0.0])


def test_saliency_inactive_relu_is_zero():
    p = {"W1": np.array([[1.0], [1.0]]), "b1": np.array([-10.0]), "v": np.array([1.0]), "c": np.asarray(0.0)}
    m = FeedForwardModel(p, (2,))
    assert np.array_equal(saliency(m, np.array([0.5, 0.5])).scores[0], [0.0, 0.0])


def test_saliency_matches_finite_differences():
    m, _ = relu_net()
    x = np.random.default_rng(3).normal(size=4)
    assert rel_err(saliency(m, x).signed[0], fd_gradient(m.logit, x)) <= 1e-4


@pytest.mark.parametrize(
    "fn",
    [
        lambda m, x: integrated_gradients(m, x, ZEROS, steps=256),
        lambda m, x: deeplift(m, x, ZEROS),
        lambda m, x: feature_ablation(m, x, ZEROS),
        lambda m, x: shapley_sampling(m, x, ZEROS, n_permutations=3),
        lambda m, x: gradient_shap(m, x, BaselineSpec("zeros"), n_samples=7, noise_sd=0.0),
    ],
)
def test_linear_zero_baseline_gives_w_times_x(fn):
    assert np.allclose(fn(LIN, ONES).scores[0], [2.0, 1.0, 0.0], atol=1e-9, rtol=0)


@pytest.mark.parametrize(
    "fn",
    [
        lambda m, x: integrated_gradients(m, x, BaselineSpec("fixed_vector", vector=x)),
        lambda m, x: deeplift(m, x, BaselineSpec("fixed_vector", vector=x)),
        lambda m, x: feature_ablation(m, x, BaselineSpec("fixed_vector", vector=x)),
        lambda m, x: gradient_shap(m, x, BaselineSpec("fixed_vector", vector=x), noise_sd=0.0),
    ],
)
def test_input_equal_to_baseline_gives_zero(fn):
    m, _ = relu_net(d=3)
    x = np.array([0.3, -1.2, 2.0])
    assert np.allclose(fn(m, x).scores, 0.0)


def test_arch_detect_linear_closed_form():
    x = np.array([0.5, -3.0, 2.0])
    assert np.allclose(arch_detect(LIN, x).scores[0], W**2)


def test_arch_detect_zero_coordinate_uses_partial():
    m, _ = relu_net(d=3)
    x = np.array([0.0, 1.0, 0.0])
    res = arch_detect(m, x)
    g0 = m.input_gradient(np.zeros(3))
    assert res.scores[0, 0] == g0[0] ** 2 and res.scores[0, 2] == g0[2] ** 2
    bb = BlackBoxModel(lambda U: U.sum(axis=1) ** 2, (3,))
    assert arch_detect(bb, x).scores[0, 0] == 0.0


def test_arch_detect_blind_to_pure_product():
    prod = BlackBoxModel(lambda U: U[:, 0] * U[:, 1], (2,))
    assert np.array_equal(arch_detect(prod, np.array([1.0, 1.0])).scores[0], [0.0, 0.0])


# -- integrated gradients / deeplift --------------------------------------------------


@pytest.mark.parametrize("kind", ["linear", "feedforward", "recurrent"])
def test_ig_completeness(kind):
    m = random_models((4, 3), seed=7)[kind]
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 4, 3))
    res = integrated_gradients(m, X, BaselineSpec("uniform_random", seed=2), steps=256)
    assert np.max(np.abs(res.extras["completeness_residual"])) <= 1e-3


def test_ig_converges_with_steps_on_smooth_model():
    m = random_models((4, 3), seed=7)["recurrent"]
    x = np.random.default_rng(1).normal(size=(4, 3))
    errs = [abs(integrated_gradients(m, x, ZEROS, steps=s).extras["completeness_residual"][0]) for s in (4, 64)]
    assert errs[1] < errs[0]


def test_deeplift_matches_layerwise_rescale_oracle():
    m, p = relu_net(d=5, hidden=8, seed=4)
    rng = np.random.default_rng(9)
    for _ in range(5):
        x, xr = rng.normal(size=5), rng.normal(size=5)
        got = deeplift(m, x, BaselineSpec("fixed_vector", vector=xr)).signed[0]
        want = deeplift_two_layer(p["W1"], p["b1"], p["v"], float(p["c"]), x, xr)
        assert np.allclose(got, want, atol=1e-12)
        # summation to delta
        assert got.sum() == pytest.approx(m.logit(x) - m.logit(xr), abs=1e-10)


def test_deeplift_rejects_blackbox():
    with pytest.raises(CapabilityError):
        deeplift(BlackBoxModel(lambda U: U.sum(axis=1), (3,)), ONES)


def test_deeplift_shap_singleton_equals_deeplift():
    m, _ = relu_net(d=3)
    x, b = np.array([1.0, -0.5, 2.0]), np.array([0.2, 0.1, -0.3])
    a = deeplift_shap(m, x, b[None]).signed
    assert np.allclose(a, deeplift(m, x, BaselineSpec("fixed_vector", vector=b)).signed, atol=1e-12)


def test_deeplift_shap_linear_two_baselines():
    x = np.array([1.0, 2.0, -1.0])
    xbar = np.array([0.5, 0.5, 0.5])
    res = deeplift_shap(LIN, x, np.stack([np.zeros(3), 2 * xbar]))
    want = 0.5 * (np.abs(W * x) + np.abs(W * (x - 2 * xbar)))
    signed_want = 0.5 * (W * x + W * (x - 2 * xbar))
    assert np.allclose(res.signed[0], signed_want)
    assert np.all(res.scores[0] <= want + 1e-12)


def test_deeplift_shap_seeded_repeatable():
    m, _ = relu_net(d=3)
    x = np.random.default_rng(0).normal(size=(4, 3))
    spec = BaselineSpec("distribution_sample", seed=5, count=6)
    assert np.array_equal(deeplift_shap(m, x, spec).scores, deeplift_shap(m, x, spec).scores)


# -- gradient shap / smoothgrad -------------------------------------------------------


def test_gradient_shap_variance_shrinks_like_one_over_n():
    # oracle: empirical variance over 50 repetitions
    m, _ = relu_net(d=4, hidden=8, seed=2)
    x = np.array([0.5, -1.0, 1.5, 0.2])
    spec = BaselineSpec("distribution_sample", count=16, seed=1)
    var = {}
    for n in (8, 64):
        est = np.stack([gradient_shap(m, x, spec, n_samples=n, noise_sd=0.2, seed=s).signed[0] for s in range(50)])
        var[n] = est.var(axis=0, ddof=1).sum()
    assert 4.0 <= var[8] / var[64] <= 16.0


def test_smoothgrad_linear_and_noise_free():
    assert np.allclose(smoothgrad_saliency(LIN, ONES, noise_sd=0.7, n_samples=5).scores[0], np.abs(W))
    m, _ = relu_net()
    x = np.random.default_rng(2).normal(size=4)
    assert np.allclose(smoothgrad_saliency(m, x, noise_sd=0.0, n_samples=3).scores, saliency(m, x).scores)
    a = smoothgrad_saliency(m, x, n_samples=1, seed=3).scores
    assert np.array_equal(a, smoothgrad_saliency(m, x, n_samples=1, seed=3).scores)


# -- shapley sampling -----------------------------------------------------------------


def test_shapley_additive_exact_any_n():
    x = np.array([1.0, -2.0, 3.0])
    for n in (1, 4):
        assert np.allclose(shapley_sampling(LIN, x, ZEROS, n_permutations=n).signed[0], W * x)


def test_shapley_d3_enumeration_equals_brute_force():
    nonlin = BlackBoxModel(lambda U: U[:, 0] * U[:, 1] + np.sin(U[:, 2]) * U[:, 0] + U[:, 2] ** 2, (3,))
    x, b = np.array([1.0, 2.0, -0.5]), np.array([0.1, 0.0, 0.3])
    got = shapley_sampling(nonlin, x, BaselineSpec("fixed_vector", vector=b), enumerate_all=True).signed[0]
    f = lambda z: float(nonlin.logit(z))
    assert np.allclose(got, brute_permutation_shapley(f, x, b), atol=1e-12)
    assert np.allclose(got, exact_shapley(f, x, b), atol=1e-12)


def test_shapley_enumeration_limit():
    with pytest.raises(AttributionError):
        shapley_sampling(LinearModel.from_weights(np.ones(10)), np.ones(10), enumerate_all=True)


# -- permutation / ablation / occlusion -----------------------------------------------


def test_feature_permutation_constant_and_ignored_features():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(8, 3))
    X[:, 1] = 4.0
    res = feature_permutation(LIN, X, seed=1)
    assert np.all(res.scores[:, 1] == 0)  # constant across batch
    assert np.all(res.scores[:, 2] == 0)  # w_2 = 0
    assert np.array_equal(res.scores, feature_permutation(LIN, X, seed=1).scores)


def test_feature_permutation_needs_batch():
    with pytest.raises(AttributionError):
        feature_permutation(LIN, ONES)


def test_occlusion_window_one_equals_ablation():
    m = random_models((3, 3), seed=1)["recurrent"]
    X = np.random.default_rng(0).normal(size=(2, 3, 3))
    spec = BaselineSpec("uniform_random", seed=4)
    a = occlusion(m, X, (1, 1), spec)
    b = feature_ablation(m, X, spec)
    assert np.array_equal(a.signed, b.signed) and np.array_equal(a.scores, b.scores)


def test_occlusion_whole_input_window():
    m = random_models((3, 3), seed=1)["feedforward"]
    x = np.random.default_rng(0).normal(size=(3, 3))
    res = occlusion(m, x, (3, 3), ZEROS)
    assert np.allclose(res.scores[0], abs(m.logit(x) - m.logit(np.zeros((3, 3)))))


def test_occlusion_2x2_corner_coverage():
    # additive model: each window's change is the sum of its cells, so corners average one window
    w = np.arange(1.0, 10.0).reshape(3, 3)
    m = LinearModel.from_weights(w)
    x = np.ones((3, 3))
    res = occlusion(m, x, (2, 2), ZEROS)
    assert res.signed[0, 0, 0] == w[:2, :2].sum()
    assert res.signed[0, 2, 2] == w[1:, 1:].sum()
    # centre is covered by all four windows
    assert res.signed[0, 1, 1] == pytest.approx(np.mean([w[a : a + 2, b : b + 2].sum() for a in (0, 1) for b in (0, 1)]))


# -- random baseline ------------------------------------------------------------------


def test_random_attribution_is_permutation():
    r = random_attribution((4,), seed=3)
    assert sorted(r.scores[0].tolist()) == [1.0, 2.0, 3.0, 4.0]
    a = random_attribution((50,), seed=1).scores
    b = random_attribution((50,), seed=2).scores
    assert not np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_random_attribution_multiset(d, seed):
    r = random_attribution((d,), seed=seed, sample_ids=(0, 7))
    for row in r.scores:
        assert sorted(row.tolist()) == list(range(1, d + 1))


# -- contract -------------------------------------------------------------------------


def test_result_rejects_negative_scores():
    with pytest.raises(AttributionError):
        AttributionResult(np.ones((1, 2)), -np.ones((1, 2)), "x", np.array([0]))


def test_all_methods_nonnegative_finite_and_deterministic():
    m = random_models((3, 2), seed=3)["feedforward"]
    X = np.random.default_rng(1).normal(size=(3, 3, 2))
    for method in METHODS + ("random",):
        a = attribute(method, m, X, seed=5)
        b = attribute(method, m, X, seed=5)
        assert a.scores.shape == X.shape
        assert np.all(np.isfinite(a.scores)) and np.all(a.scores >= 0)
        assert np.array_equal(a.scores, b.scores), method
        assert a.target == "logit"


def test_attribute_sample_independent_of_batch():
    m = random_models((3, 2), seed=3)["recurrent"]
    X = np.random.default_rng(1).normal(size=(4, 3, 2))
    for method in ("integrated_gradients", "gradient_shap", "shapley_sampling", "smoothgrad_saliency"):
        full = attribute(method, m, X, seed=2, sample_ids=[10, 11, 12, 13])
        one = attribute(method, m, X[2:3], seed=2, sample_ids=[12])
        assert np.array_equal(full.scores[2], one.scores[0]), method


def test_unknown_method_and_glassbox_capability():
    with pytest.raises(AttributionError):
        attribute("lime", LIN, ONES)
    with pytest.raises(CapabilityError):
        attribute("glassbox", random_models()["recurrent"], np.zeros((4, 3)))
    assert "glassbox" in ALL_METHODS


def test_linear_concordance_of_rankings():
    rng = np.random.default_rng(4)
    w = rng.normal(size=6)
    m = LinearModel.from_weights(w)
    x = rng.normal(size=6)
    ref = np.argsort(-np.abs(w * x), kind="stable")
    for method, kw in (
        ("integrated_gradients", {"baseline": ZEROS, "steps": 256}),
        ("deeplift", {"baseline": ZEROS}),
        ("feature_ablation", {"baseline": ZEROS}),
        ("shapley_sampling", {"baseline": ZEROS}),
    ):
        s = attribute(method, m, x, **kw).scores[0]
        assert np.array_equal(np.argsort(-s, kind="stable"), ref), method
    assert np.array_equal(np.argsort(-saliency(m, x).scores[0], kind="stable"), np.argsort(-np.abs(w), kind="stable"))


def test_attribution_csv_roundtrip(tmp_path):
    m = random_models((3, 2), seed=3)["linear"]
    X = np.random.default_rng(1).normal(size=(2, 3, 2))
    res = attribute("deeplift", m, X, seed=4, sample_ids=[5, 9])
    p = tmp_path / "a.csv"
    write_attribution_csv(res, p, ["hr", "sbp"])
    header = p.read_text().splitlines()[0]
    assert header == "sample_id,timestep,feature,signed_score,abs_score,method,seed"
    back = read_attribution_csv(p, ["hr", "sbp"], n_timesteps=3)
    assert np.array_equal(back.signed, res.signed) and np.array_equal(back.sample_ids, [5, 9])
    assert back.method == "deeplift" and back.seed == 4
