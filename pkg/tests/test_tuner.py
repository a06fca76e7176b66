import logging

import numpy as np
import pytest
from pydantic import ValidationError

from annealpath import tuner
from annealpath.engine import EvolutionConfig
from annealpath.errors import ConfigError
from annealpath.runs import RunOutcome
from annealpath.sampler import RunReport
from annealpath.schedule import OFFSET_CEILING, lowest_offset
from annealpath.tuner import (
    TunerConfig,
    load_checkpoint,
    save_checkpoint,
    tune,
    tune_floppiness,
    tune_kiefer_wolfowitz,
    tune_sigma_average,
)

FAST = EvolutionConfig(time_step=0.01, record_stride=1000)
FLOOR = lowest_offset()


def make_report(offsets, floppiness=None, sigma=None, energy=-3.0, empty=False) -> RunReport:
    n = len(offsets)
    floppiness = tuple(floppiness or (0.0,) * n)
    sigma = tuple(sigma or (1.0,) * n)
    return RunReport(
        label="stub",
        anneal_time=1.0,
        offsets=tuple(offsets),
        seed=0,
        angular_factor=1.0,
        n_events=1,
        success_probability=0.5,
        empirical_success=0.5,
        sigma_z_avg=sigma,
        exact_sigma_z_avg=sigma,
        final_avg_energy=energy,
        exact_final_energy=energy,
        floppiness=floppiness,
        floppiness_empty=empty,
        exact_floppiness=floppiness,
        first_excited_population=0.0,
    )


def stub_execute(monkeypatch, build):
    calls = []

    def fake(request):
        calls.append(request)
        return RunOutcome(report=build(request.schedule.gammas))

    monkeypatch.setattr(tuner, "execute", fake)
    return calls


def test_zero_floppiness_keeps_linear_schedule(monkeypatch, pair):
    calls = stub_execute(monkeypatch, lambda g: make_report(g))
    trajectory = tune_floppiness(pair, 1.0, TunerConfig(iterations=3))
    assert len(trajectory.records) == 3 == len(calls)
    assert all(record.offsets == (0.0, 0.0) for record in trajectory.records)
    assert trajectory.final_offsets == (0.0, 0.0)


def test_floppiness_update_rule(monkeypatch, small_problem):
    stub_execute(monkeypatch, lambda g: make_report(g, floppiness=(0.0, 0.0, 0.5)))
    trajectory = tune_floppiness(small_problem, 1.0, TunerConfig(iterations=2, alpha=-0.02))
    first, second = trajectory.records
    assert first.k == 1
    assert first.offsets == (0.0, 0.0, 0.0)
    assert first.next_offsets[2] == pytest.approx(-0.01)
    assert second.offsets == first.next_offsets
    assert second.next_offsets[2] == pytest.approx(-0.02)


def test_empty_first_excited_sample_gives_zero_update(monkeypatch, pair, caplog):
    stub_execute(monkeypatch, lambda g: make_report(g, empty=True))
    trajectory = tune_floppiness(pair, 1.0, TunerConfig(iterations=1))
    assert trajectory.records[0].flagged
    assert trajectory.final_offsets == (0.0, 0.0)
    assert "first-excited" in caplog.text


def test_updates_are_clamped(monkeypatch, pair):
    stub_execute(monkeypatch, lambda g: make_report(g, floppiness=(0.5, 0.5)))
    trajectory = tune_floppiness(pair, 1.0, TunerConfig(iterations=3, alpha=-4.0))
    assert trajectory.final_offsets == (FLOOR, FLOOR)
    assert trajectory.records[0].clamped == (True, True)


def test_sigma_average_update(monkeypatch, small_problem):
    stub_execute(monkeypatch, lambda g: make_report(g, sigma=(1.0, -1.0, 0.0)))
    trajectory = tune_sigma_average(small_problem, 1.0, TunerConfig(method="sigma-average", iterations=3))
    gammas = np.array([record.next_offsets for record in trajectory.records])
    np.testing.assert_allclose(gammas[:, :2], 0.0)
    np.testing.assert_allclose(gammas[:, 2], [-0.02, -0.04, -0.06])


def test_kiefer_wolfowitz_flat_energy_gives_zero_update(monkeypatch, pair):
    calls = stub_execute(monkeypatch, lambda g: make_report(g, energy=1.0))
    config = TunerConfig(method="kiefer-wolfowitz", iterations=3, kw_evaluate=False)
    trajectory = tune_kiefer_wolfowitz(pair, 1.0, config)
    assert trajectory.final_offsets == (0.0, 0.0)
    assert trajectory.probe_runs == len(calls) == 2 * 2 * 3
    assert trajectory.evaluation_runs == 0
    assert all(len(record.probes) == 4 for record in trajectory.records)


def test_kiefer_wolfowitz_first_step(monkeypatch, pair):
    # Energy linear in the offsets: the clamped difference quotient is exactly 1.
    calls = stub_execute(monkeypatch, lambda g: make_report(g, energy=float(sum(g))))
    trajectory = tune_kiefer_wolfowitz(pair, 1.0, TunerConfig(method="kiefer-wolfowitz", iterations=1))
    record = trajectory.records[0]
    probe_offsets = [request.schedule.gammas for request in calls[:4]]
    assert probe_offsets == [(OFFSET_CEILING, 0.0), (FLOOR, 0.0), (0.0, OFFSET_CEILING), (0.0, FLOOR)]
    assert record.clamped == (False, True, False, True)
    assert record.statistic == pytest.approx((1.0, 1.0))
    assert record.next_offsets == (FLOOR, FLOOR)
    assert trajectory.probe_runs == 4
    assert trajectory.evaluation_runs == 1


def test_kiefer_wolfowitz_sign_and_gains(monkeypatch, pair):
    stub_execute(monkeypatch, lambda g: make_report(g, energy=float(sum(g))))
    config = TunerConfig(method="kiefer-wolfowitz", iterations=2, kw_sign=1, alpha=0.0, kw_evaluate=False)
    trajectory = tune_kiefer_wolfowitz(pair, 1.0, config)
    first, second = trajectory.records
    assert first.next_offsets == (OFFSET_CEILING, OFFSET_CEILING)
    # k=2: probes around +1 only move down by 2**(-1/3); the quotient is still 1.
    assert second.statistic == pytest.approx((1.0, 1.0))
    assert second.next_offsets == (OFFSET_CEILING, OFFSET_CEILING)


def test_wrong_method_is_rejected(pair):
    with pytest.raises(ConfigError):
        tune_kiefer_wolfowitz(pair, 1.0, TunerConfig(method="floppiness"))


def test_spectrum_iterations_must_exist():
    with pytest.raises(ValidationError):
        TunerConfig(iterations=2, spectrum_iterations=(3,))


def test_landau_zener_warning(monkeypatch, pair, caplog):
    stub_execute(monkeypatch, lambda g: make_report(g, energy=5.0))
    with caplog.at_level(logging.WARNING):
        tune_floppiness(pair, 1.0, TunerConfig(iterations=1))
    assert "outside" in caplog.text


def test_real_runs_are_deterministic_and_non_increasing(small_problem):
    config = TunerConfig(iterations=4, events_per_run=500, master_seed=3, evolution=FAST, alpha=-0.2)
    first = tune_floppiness(small_problem, 1.0, config)
    second = tune_floppiness(small_problem, 1.0, config)
    assert first == second
    gammas = np.array([record.offsets for record in first.records] + [first.final_offsets])
    assert np.all(np.diff(gammas, axis=0) <= 0.0)


def test_spectrum_is_recorded_on_request(small_problem):
    seen = []
    config = TunerConfig(
        iterations=2, events_per_run=200, evolution=FAST, spectrum_iterations=(2,), grid_points=11, levels=2
    )
    trajectory = tune(small_problem, 1.0, config, on_spectrum=lambda k, trace: seen.append((k, trace.levels.shape)))
    assert seen == [(2, (11, 2))]
    assert trajectory.records[0].min_gap is None
    assert trajectory.records[1].min_gap > 0.0
    assert "min_gap_GHz" in trajectory.to_frame().columns


def test_trajectory_frame(small_problem):
    config = TunerConfig(iterations=2, events_per_run=200, evolution=FAST)
    frame = tune(small_problem, 1.0, config).to_frame()
    assert list(frame.columns[:4]) == ["k", "success_probability", "final_avg_energy_GHz", "flagged"]
    assert {"gamma_1", "gamma_3", "mu_1", "mu_3"} <= set(frame.columns)
    assert frame["k"].tolist() == [1, 2]


def test_statistic_columns_follow_the_method(monkeypatch, pair):
    stub_execute(monkeypatch, lambda g: make_report(g, energy=1.0))
    sigma = tune(pair, 1.0, TunerConfig(method="sigma-average", iterations=1)).to_frame()
    kw = tune(pair, 1.0, TunerConfig(method="kiefer-wolfowitz", iterations=1)).to_frame()
    assert {"sigma_stat_1", "sigma_stat_2"} <= set(sigma.columns)
    assert {"quotient_1", "quotient_2"} <= set(kw.columns)
    assert not any(column.startswith("mu_") for column in [*sigma.columns, *kw.columns])


def test_level_mode_reaches_every_run(monkeypatch, pair):
    calls = stub_execute(monkeypatch, lambda g: make_report(g))
    tune_floppiness(pair, 1.0, TunerConfig(iterations=2, level_mode="estimated"))
    tune_kiefer_wolfowitz(pair, 1.0, TunerConfig(method="kiefer-wolfowitz", iterations=1, level_mode="estimated"))
    assert len(calls) == 2 + 4 + 1
    assert {request.level_mode for request in calls} == {"estimated"}
    assert TunerConfig().level_mode == "exact"


def test_offsets_at(small_problem):
    trajectory = tune(small_problem, 1.0, TunerConfig(iterations=2, events_per_run=200, evolution=FAST, alpha=-0.5))
    assert trajectory.offsets_at(0) == trajectory.offsets_at(1) == (0.0, 0.0, 0.0)
    assert trajectory.offsets_at(2) == trajectory.records[0].next_offsets
    with pytest.raises(ConfigError):
        trajectory.offsets_at(3)


def test_resume_reproduces_uninterrupted_run(tmp_path, small_problem):
    config = TunerConfig(iterations=3, events_per_run=300, master_seed=5, evolution=FAST, alpha=-0.3)
    full = tune(small_problem, 1.0, config)

    path = tmp_path / "checkpoint.json"
    tune(
        small_problem, 1.0, config.model_copy(update={"iterations": 2}),
        on_record=lambda trajectory: save_checkpoint(path, small_problem, trajectory),
    )
    checkpoint = load_checkpoint(path)
    assert len(checkpoint.trajectory.records) == 2
    resumed = tune(small_problem, 1.0, config, resume_from=checkpoint)
    assert resumed == full


def test_resume_rejects_a_different_experiment(tmp_path, small_problem):
    config = TunerConfig(iterations=1, events_per_run=100, evolution=FAST)
    path = save_checkpoint(tmp_path / "c.json", small_problem, tune(small_problem, 1.0, config))
    checkpoint = load_checkpoint(path)
    with pytest.raises(ConfigError):
        tune(small_problem, 2.0, config, resume_from=checkpoint)
    with pytest.raises(ConfigError):
        tune(small_problem, 1.0, config.model_copy(update={"alpha": -0.5}), resume_from=checkpoint)


def test_unreadable_checkpoint(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{")
    with pytest.raises(ConfigError):
        load_checkpoint(path)
