import math

import numpy as np
import pytest

from kobdual.core_random import RandomStream, summarize
from kobdual.factory import TargetFunction
from kobdual.registry import get_function
from kobdual.verify import generator_errors
from kobdual.wright_fisher import (
    DiffusionConfig,
    PopulationState,
    SelectionModel,
    discrete_generator_apply,
    limit_generator_apply,
    simulate_diffusion,
    simulate_diffusion_batch,
    simulate_frequency_path,
    simulate_frequency_paths,
    step_counts,
    step_generation,
)

from conftest import within

LINEAR = get_function("linear13")
HALF = TargetFunction(lambda p: np.full_like(p, 0.5), 0.0, "half")


def test_initial_state():
    s = PopulationState.initial(10, 0.35)
    assert s.n_individuals == 10 and s.frequency == 0.3


def test_absorbing_zero(registry_table):
    model = SelectionModel(1.0, registry_table("classical"))
    path = simulate_frequency_path(50, 0.0, 0.5, model, RandomStream(1))
    assert np.all(path.values == 0.0)


def test_absorbing_one(registry_table):
    model = SelectionModel(1.0, registry_table("classical"))
    path = simulate_frequency_path(50, 1.0, 0.5, model, RandomStream(1))
    assert np.all(path.values == 1.0)
    assert path.times[-1] == pytest.approx(0.5)


def test_sigma_must_not_exceed_n(linear_table):
    with pytest.raises(ValueError):
        step_generation(PopulationState.initial(2, 0.5), SelectionModel(3.0, linear_table), RandomStream(1))


def test_neutral_generation_is_binomial(linear_table):
    model = SelectionModel(0.0, linear_table)
    start = PopulationState.initial(20, 0.25)
    rng = RandomStream(2)
    freqs = [step_generation(start, model, rng).frequency for _ in range(4000)]
    s = summarize(freqs)
    assert within(s, 0.25)
    assert np.var(freqs, ddof=1) == pytest.approx(0.25 * 0.75 / 20, rel=0.1)


def test_one_generation_mean_at_fixed_point(linear_table):
    model = SelectionModel(1.0, linear_table)
    counts = np.full(10**5, 50)
    new, capped = step_counts(counts, 100, model, RandomStream(3))
    assert within(summarize(new[~capped] / 100), 0.5)


def test_count_kernel_matches_individual_kernel(registry_table):
    model = SelectionModel(5.0, registry_table("linear13"))
    start = PopulationState.initial(40, 0.2)
    rng = RandomStream(4)
    ind = summarize([step_generation(start, model, rng).frequency for _ in range(5000)])
    new, capped = step_counts(np.full(20_000, 8), 40, model, RandomStream(5))
    batch = summarize(new[~capped] / 40)
    assert ind.z_score(batch) < 4


def test_neutral_martingale(linear_table):
    _, values, _ = simulate_frequency_paths(100, 0.3, 0.5, SelectionModel(0.0, linear_table), 10**4, RandomStream(6))
    assert within(summarize(values[:, -1]), 0.3)


def test_particle_vs_diffusion_terminal_mean(registry_table):
    model = SelectionModel(1.0, registry_table("linear13"))
    _, particle, _ = simulate_frequency_paths(500, 0.2, 0.5, model, 10**4, RandomStream(7))
    _, diff = simulate_diffusion_batch(0.2, 0.5, 1.0, LINEAR, DiffusionConfig(), 10**4, RandomStream(8))
    assert summarize(particle[:, -1]).z_score(summarize(diff[:, -1])) <= 4


def test_frequency_paths_thread_invariant(linear_table):
    model = SelectionModel(1.0, linear_table)
    a = simulate_frequency_paths(50, 0.4, 0.2, model, 9000, RandomStream(9), threads=1)
    b = simulate_frequency_paths(50, 0.4, 0.2, model, 9000, RandomStream(9), threads=4)
    assert np.array_equal(a[1], b[1]) and a[2] == b[2]


def test_diffusion_constant_at_endpoints():
    classical = get_function("classical")
    for y0 in (0.0, 1.0):
        path = simulate_diffusion(y0, 0.3, 1.0, classical, DiffusionConfig(dt=0.01), RandomStream(1))
        assert np.all(path.values == y0)


def test_diffusion_driftless_mean():
    _, y = simulate_diffusion_batch(0.3, 0.5, 0.0, LINEAR, DiffusionConfig(), 10**4, RandomStream(10))
    assert within(summarize(y[:, -1]), 0.3)


def test_diffusion_constant_forcing_mean():
    _, y = simulate_diffusion_batch(0.1, 0.5, 2.0, HALF, DiffusionConfig(), 10**4, RandomStream(11))
    exact = 0.5 - 0.4 * math.exp(-1.0)
    assert within(summarize(y[:, -1]), exact, slack=2e-3)


def test_diffusion_single_path_grid():
    path = simulate_diffusion(0.5, 0.25, 1.0, LINEAR, DiffusionConfig(dt=0.01), RandomStream(12))
    assert path.times.size == 26 and path.times[-1] == pytest.approx(0.25)
    assert np.all((path.values >= 0) & (path.values <= 1))


def test_diffusion_config_validation():
    with pytest.raises(ValueError):
        DiffusionConfig(dt=0.0)
    with pytest.raises(ValueError):
        DiffusionConfig(scheme="milstein")


def test_generator_kills_constants():
    for N in (10, 50):
        assert discrete_generator_apply(N, 1.0, LINEAR, lambda y: np.ones_like(y), 0.4) == pytest.approx(0.0, abs=1e-12)


def test_generator_neutral_martingale():
    assert discrete_generator_apply(40, 0.0, LINEAR, lambda y: y, 0.25) == pytest.approx(0.0, abs=1e-12)


def test_generator_off_grid_rejected():
    with pytest.raises(ValueError):
        discrete_generator_apply(10, 1.0, LINEAR, lambda y: y, 0.33)


def test_scaled_generator_converges():
    errs = []
    for N in (50, 200, 800):
        y = 0.3
        lim = limit_generator_apply(1.0, LINEAR, lambda x: x**2, y)
        errs.append(abs(N * discrete_generator_apply(N, 1.0, LINEAR, lambda x: x**2, y) - lim))
    assert errs[0] > errs[1] > errs[2]


def test_limit_generator_hand_values():
    assert limit_generator_apply(1.0, LINEAR, lambda y: y, 0.3, dh=lambda y: 1.0, d2h=lambda y: 0.0) == pytest.approx((1.3 / 3 - 0.3))
    classical = get_function("classical")
    for y in (0.0, 1.0):
        assert limit_generator_apply(1.0, classical, lambda x: x**2, y, dh=lambda x: 2 * x, d2h=lambda x: 2.0) == 0.0
    val = limit_generator_apply(1.0, HALF, lambda x: x * (1 - x), 0.3, dh=lambda x: 1 - 2 * x, d2h=lambda x: -2.0)
    assert val == pytest.approx(-0.13)
    # finite-difference derivatives agree with the analytic ones
    assert limit_generator_apply(1.0, HALF, lambda x: x * (1 - x), 0.3) == pytest.approx(-0.13, abs=1e-4)


def test_generator_error_halves():
    errs = generator_errors(LINEAR, 1.0)
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(1.5 <= r <= 3.0 for r in ratios)
