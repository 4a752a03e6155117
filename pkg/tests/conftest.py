import numpy as np
import pytest

from attrib_audit.data import GeneratorConfig, generate_synthetic_cohort, split
from attrib_audit.models import FeedForwardModel, LinearModel, RecurrentModel, TrainConfig, train


def random_models(input_shape=(4, 3), hidden=5, seed=0):
    """Untrained built-ins with random parameters and a non-trivial standardization."""
    rng = np.random.default_rng(seed)
    d = int(np.prod(input_shape))
    F = input_shape[-1]
    shift = rng.normal(0, 0.5, input_shape)
    scale = rng.uniform(0.5, 2.0, input_shape)
    lin = LinearModel({"w": rng.normal(size=input_shape), "b": np.asarray(rng.normal())}, input_shape, shift, scale)
    ff = FeedForwardModel(
        {
            "W1": rng.normal(size=(d, hidden)),
            "b1": rng.normal(size=hidden),
            "v": rng.normal(size=hidden),
            "c": np.asarray(rng.normal()),
        },
        input_shape,
        shift,
        scale,
    )
    rnn = RecurrentModel(
        {
            "Wx": rng.normal(0, 0.6, size=(F, hidden)),
            "Wh": rng.normal(0, 0.4, size=(hidden, hidden)),
            "b": rng.normal(0, 0.2, size=hidden),
            "v": rng.normal(size=hidden),
            "c": np.asarray(rng.normal()),
        },
        input_shape,
        shift,
        scale,
    )
    return {"linear": lin, "feedforward": ff, "recurrent": rnn}


@pytest.fixture(scope="session")
def small_cohort():
    cfg = GeneratorConfig(n_samples=400, n_timesteps=6, n_features=8, n_informative=2, include_static=True, missingness=0.1)
    return generate_synthetic_cohort(cfg, 11)


@pytest.fixture(scope="session")
def small_splits(small_cohort):
    return split(small_cohort, 11)


@pytest.fixture(scope="session")
def trained_models(small_cohort, small_splits):
    s, c = small_splits, small_cohort
    cfg = TrainConfig(epochs=8, seed=1)
    return {
        kind: train(kind, c.X[s.train], c.y[s.train], cfg, c.X[s.val], c.y[s.val])
        for kind in ("linear", "feedforward", "recurrent")
    }


# acceptance criteria outcomes, filled by test_acceptance and echoed in the summary
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d}: {detail}")
