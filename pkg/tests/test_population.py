import math

import numpy as np
import pytest

from asyncfl.sim.population import (
    Population,
    PopulationSpec,
    SpreadTooNarrow,
    check_spread,
    client_execution_model,
    generate_population,
)


def test_default_population_has_wide_straggler_spread():
    pop = Population(PopulationSpec())
    assert len(pop) == 100_000
    assert pop.spread(4000) >= 100


def test_population_is_a_function_of_its_spec():
    a = Population(PopulationSpec(population_size=1000))
    b = Population(PopulationSpec(population_size=1000))
    c = Population(PopulationSpec(population_size=1000, rng_seed=1))
    assert a.digest() == b.digest() != c.digest()


def test_examples_are_lognormal_and_clipped():
    spec = PopulationSpec(population_size=50_000)
    pop = Population(spec)
    assert pop.num_examples.min() >= 1 and pop.num_examples.max() <= spec.max_examples
    assert abs(np.median(np.log(pop.num_examples)) - spec.examples_lognormal_mu) < 0.05


def test_duration_correlates_with_data_volume(small_population):
    t = small_population.execution_times(4000)
    rho = np.corrcoef(np.log(t), np.log(small_population.num_examples))[0, 1]
    assert rho > 0.5


def test_narrow_population_rejected():
    pop = Population(PopulationSpec(population_size=500, speed_lognormal_sigma=0.0, examples_lognormal_sigma=0.0,
                                    bandwidth_lognormal_sigma=0.0))
    assert pop.spread(4000) == pytest.approx(1.0)
    with pytest.raises(SpreadTooNarrow):
        check_spread(pop, 4000)


def test_execution_model_components(small_population):
    p = small_population.profile(7)
    down, train, up = client_execution_model(p, 4000)
    assert down == up == pytest.approx(4000 / p.bandwidth)
    assert train == pytest.approx(p.speed_factor * p.num_examples)
    assert p.execution_time(4000, 0.05) == pytest.approx(down + train + up + 0.05)
    assert small_population.execution_times(4000)[7] == pytest.approx(p.execution_time(4000, 0.05))


def test_spec_validation():
    with pytest.raises(ValueError):
        PopulationSpec(population_size=0)
    with pytest.raises(ValueError):
        PopulationSpec(dropout_rate=1.5)
    with pytest.raises(ValueError):
        PopulationSpec(speed_lognormal_mu=math.inf)


def test_generate_population_profiles():
    profiles = generate_population(PopulationSpec(population_size=10))
    assert [p.client_id for p in profiles] == list(range(10))
