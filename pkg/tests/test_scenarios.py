"""Scenario generation, reduction, elbow, KDE, and stochastic HCA shape."""

import dataclasses

import numpy as np
import pytest

from hostcap import fixtures
from hostcap.profiles import synthetic_day, zero_scenario
from hostcap.scenarios import (
    HcDistribution,
    ScenarioError,
    ScenarioSet,
    default_noise,
    elbow_curve,
    elbow_pick,
    gaussian_kde,
    generate_scenarios,
    kmeans_reduce,
    lloyd_kmeans,
    load_scenario_set,
    save_scenario_set,
    scenario_features,
)


@pytest.fixture
def baseline(net4):
    return synthetic_day(net4, horizon=12, dt=2.0)


def test_zero_noise_copies(baseline):
    sset = generate_scenarios(baseline, {}, 3, seed=1)
    assert len(sset) == 3
    for s in sset.scenarios:
        assert np.array_equal(s.alpha_pv, baseline.alpha_pv)
        assert s.probability == pytest.approx(1 / 3)


def test_seed_reproducibility(baseline):
    a = generate_scenarios(baseline, default_noise(baseline), 5, seed=42)
    b = generate_scenarios(baseline, default_noise(baseline), 5, seed=42)
    for sa, sb in zip(a.scenarios, b.scenarios):
        for name in ("alpha_pv", "t_out", "lmp", "fixed_load_p"):
            assert np.array_equal(getattr(sa, name), getattr(sb, name))
    c = generate_scenarios(baseline, default_noise(baseline), 5, seed=43)
    assert not np.array_equal(a.scenarios[0].alpha_pv, c.scenarios[0].alpha_pv)


def test_law_of_large_numbers_alpha(baseline):
    sset = generate_scenarios(baseline, {"alpha_pv": 0.05}, 100, seed=7)
    stack = np.stack([s.alpha_pv for s in sset.scenarios])
    # clamping biases points near the domain edges; check an interior step
    mid = int(np.argmax(baseline.alpha_pv < 0.8) + 1)
    interior = (baseline.alpha_pv > 0.2) & (baseline.alpha_pv < 0.8)
    assert np.all(np.abs(stack.mean(axis=0)[interior] - baseline.alpha_pv[interior]) < 0.015)


def test_clamping_to_domains(baseline):
    big = {"alpha_pv": 0.8, "fixed_load_p": 1e4, "baseline_hp": 5.0}
    sset = generate_scenarios(baseline, big, 4, seed=3)
    for s in sset.scenarios:
        assert np.all(s.alpha_pv >= 0.0) and np.all(s.alpha_pv <= 1.0)
        assert np.all(s.fixed_load_p >= 0.0)
        assert np.all(s.baseline_hp <= 0.0) and np.all(s.baseline_hp >= -1.0)


def test_probabilities_validated(baseline):
    bad = (baseline.with_probability(0.4), baseline.with_probability(0.4))
    with pytest.raises(ScenarioError, match="probabilities"):
        ScenarioSet(bad)


def test_kmeans_inertia_monotone_история(baseline):
    sset = generate_scenarios(baseline, default_noise(baseline), 24, seed=5)
    X = scenario_features(sset)
    _, _, inertia, history = lloyd_kmeans(X, 4, seed=0)
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))
    assert inertia <= history[0] + 1e-9


def test_kmeans_reduce_identity_at_k_equals_K(baseline):
    sset = generate_scenarios(baseline, default_noise(baseline), 6, seed=2)
    reduced, inertia = kmeans_reduce(sset, 6, seed=0)
    assert inertia == pytest.approx(0.0, abs=1e-9)
    assert len(reduced) == 6
    assert np.allclose(reduced.probabilities, 1 / 6)


def test_kmeans_two_well_separated_clusters(baseline):
    lo = generate_scenarios(baseline, {"alpha_pv": 0.01}, 6, seed=1)
    dark = dataclasses.replace(baseline, alpha_pv=baseline.alpha_pv * 0.05)
    hi = generate_scenarios(dark, {"alpha_pv": 0.01}, 6, seed=2)
    both = ScenarioSet(tuple(
        s.with_probability(1 / 12) for s in lo.scenarios + hi.scenarios))
    reduced, _ = kmeans_reduce(both, 2, seed=0)
    # one medoid per cluster, probabilities split evenly
    assert sorted(s.probability for s in reduced.scenarios) == [0.5, 0.5]
    means = sorted(float(np.mean(s.alpha_pv)) for s in reduced.scenarios)
    assert means[0] < 0.2 * means[1] + 0.2


def test_forced_extremes_present(baseline):
    sset = generate_scenarios(baseline, default_noise(baseline), 20, seed=9)
    reduced, _ = kmeans_reduce(sset, 4, seed=0)
    pv_energy = [float(np.sum(s.alpha_pv)) for s in sset.scenarios]
    load_energy = [float(np.sum(s.fixed_load_p)) for s in sset.scenarios]
    ext_pv = sset.scenarios[int(np.argmax(pv_energy))]
    ext_load = sset.scenarios[int(np.argmax(load_energy))]
    reduced_alpha = [s.alpha_pv.tobytes() for s in reduced.scenarios]
    assert ext_pv.alpha_pv.tobytes() in reduced_alpha
    reduced_load = [s.fixed_load_p.tobytes() for s in reduced.scenarios]
    assert ext_load.fixed_load_p.tobytes() in reduced_load
    assert sum(s.probability for s in reduced.scenarios) == pytest.approx(1.0)


def test_elbow_monotone_and_terminal_zero(baseline):
    sset = generate_scenarios(baseline, default_noise(baseline), 10, seed=4)
    curve = elbow_curve(sset, 10, seed=0)
    inertias = [c[1] for c in curve]
    assert all(b <= a + 1e-9 for a, b in zip(inertias, inertias[1:]))
    assert inertias[-1] == pytest.approx(0.0, abs=1e-9)
    assert 1 <= elbow_pick(curve) <= 10


def test_kde_integrates_to_one():
    rng = np.random.default_rng(0)
    samples = rng.normal(50.0, 5.0, size=40)
    dens = gaussian_kde(samples)
    lo = samples.min() - 5 * dens.bandwidth
    hi = samples.max() + 5 * dens.bandwidth
    xs = np.linspace(lo, hi, 2001)
    integral = np.trapezoid(dens(xs), xs)
    assert integral == pytest.approx(1.0, abs=1e-3)


def test_kde_symmetry_and_degenerate():
    dens = gaussian_kde([-1.0, 1.0], bandwidth=0.7)
    xs = np.linspace(0, 3, 50)
    assert np.allclose(dens(xs), dens(-xs), atol=1e-12)
    with pytest.raises(ScenarioError, match="bandwidth"):
        gaussian_kde([2.0, 2.0, 2.0])
    peak = gaussian_kde([0.0, 0.0, 0.0], bandwidth=1.0)
    assert peak(0.0) > peak(1.0)


def test_hc_distribution_statistics():
    d = HcDistribution(np.array([40.0, 50.0, 60.0]))
    assert d.min == 40.0 and d.mean == 50.0 and d.median == 50.0
    assert d.std == pytest.approx(10.0)  # sample (n-1) convention
    assert d.summary()["worst_case"] == 40.0
    rows = d.histogram_rows(bins=2)
    assert sum(r[2] for r in rows) == 3


def test_scenario_set_roundtrip(tmp_path, baseline):
    sset = generate_scenarios(baseline, default_noise(baseline), 4, seed=11)
    save_scenario_set(sset, tmp_path / "scen")
    again = load_scenario_set(tmp_path / "scen")
    assert len(again) == 4
    for a, b in zip(sset.scenarios, again.scenarios):
        for name in ("alpha_pv", "t_out", "lmp", "fixed_load_p", "baseline_hp"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name
        assert a.probability == b.probability
        assert a.dt == b.dt
