"""Experiment protocol tests: accounting, determinism, persistence."""

import json

import numpy as np
import pytest

from hilotune import plant, protocol
from hilotune.protocol import (
    SessionConfig,
    SnapshotCorruptError,
    SnapshotVersionError,
    VALIDATION_CONDITIONS,
    load_session,
    new_session,
    run_day,
    run_generation,
    run_session,
    run_trial,
    run_validation,
    save_session,
    score_trial,
    session_from_dict,
    session_to_dict,
)


def fast_config(**kw):
    """Short trials keep unit tests quick; structure is unchanged."""
    base = dict(
        trial_s=4.0, discard_s=1.0, break_s=10.0,
        validation_trial_s=5.0, master_seed=11,
    )
    base.update(kw)
    return SessionConfig(**base)


# --- config validation -------------------------------------------------------


def test_config_rejects_trial_shorter_than_discard():
    with pytest.raises(ValueError, match="trial_s"):
        SessionConfig(trial_s=10.0, discard_s=15.0)


def test_config_rejects_unknown_joint():
    with pytest.raises(ValueError, match="unknown joint"):
        SessionConfig(optimized_joints=("right_hip", "right_ankle"))


def test_config_rejects_cross_leg_joints():
    with pytest.raises(ValueError, match="one leg"):
        SessionConfig(optimized_joints=("right_hip", "left_knee"))


def test_config_round_trip_and_unknown_fields():
    cfg = fast_config()
    again = SessionConfig.from_dict(cfg.to_dict())
    assert again == cfg
    with pytest.raises(ValueError, match="unknown config fields"):
        SessionConfig.from_dict({"dayz": 2})


# --- trials ------------------------------------------------------------------


def test_trial_trimmed_length_matches_rates():
    cfg = SessionConfig(master_seed=1)
    s = new_session(cfg)
    log = run_trial(s, (100.0, 100.0), 60.0)
    assert log.n_steps == 4500  # 45 s at 100 Hz after the 15 s discard
    assert log.u_series.shape == (4499, 2)


def test_trial_zero_stiffness_means_zero_torque():
    s = new_session(fast_config())
    log = run_trial(s, (0.0, 0.0), 4.0)
    assert np.all(log.u_series == 0.0)


def test_trial_deterministic_from_snapshot():
    s = new_session(fast_config())
    run_trial(s, (50.0, 50.0), 4.0)
    doc = session_to_dict(s)
    a = run_trial(session_from_dict(doc), (120.0, 90.0), 4.0)
    b = run_trial(session_from_dict(doc), (120.0, 90.0), 4.0)
    np.testing.assert_array_equal(a.u_series, b.u_series)
    np.testing.assert_array_equal(a.e_series, b.e_series)


def test_trial_advances_clock_and_adapts_plant():
    s = new_session(fast_config())
    b_before = s.human.b
    run_trial(s, (100.0, 100.0), 4.0)
    assert s.clock_s == 4.0
    assert s.human.tau_practice == 4.0
    assert s.human.b != b_before  # learning moved the deviation


# --- generations -------------------------------------------------------------


def test_generation_archives_lambda_records():
    s = new_session(fast_config())
    run_generation(s)
    assert len(s.archive) == 7


def test_generation_advances_clock_by_bout_plus_break():
    cfg = fast_config()
    s = new_session(cfg)
    run_generation(s)
    assert s.clock_s == pytest.approx(7 * cfg.trial_s + cfg.break_s)


def test_generation_increments_g():
    s = new_session(fast_config())
    run_generation(s)
    assert s.cma.g == 1


def test_generation_atomic_on_failure(monkeypatch):
    s = new_session(fast_config())
    run_generation(s)
    before = json.dumps(session_to_dict(s))

    calls = {"n": 0}
    original = protocol._simulate_trial

    def exploding(session, K, duration):
        calls["n"] += 1
        if calls["n"] == 4:
            raise RuntimeError("plant fault")
        return original(session, K, duration)

    monkeypatch.setattr(protocol, "_simulate_trial", exploding)
    with pytest.raises(RuntimeError, match="plant fault"):
        run_generation(s)
    assert json.dumps(session_to_dict(s)) == before


# --- validation --------------------------------------------------------------


def test_validation_requires_a_generation():
    s = new_session(fast_config())
    with pytest.raises(RuntimeError):
        run_validation(s)


def test_validation_runs_all_conditions_per_round():
    s = new_session(fast_config())
    run_generation(s)
    report = run_validation(s)
    assert set(report.results) == set(VALIDATION_CONDITIONS)
    assert all(len(v) == 3 for v in report.results.values())
    assert len(report.orders) == 3
    for order in report.orders:
        assert sorted(order) == sorted(VALIDATION_CONDITIONS)


def test_validation_orders_differ_across_rounds():
    s = new_session(fast_config())
    run_generation(s)
    report = run_validation(s)
    assert len({tuple(o) for o in report.orders}) > 1


def test_validation_best_condition_matches_linear_scan():
    s = new_session(fast_config())
    run_generation(s)
    run_generation(s)
    fits = [rec[2] for rec in s.archive]
    xs = [rec[1] for rec in s.archive]
    expected = xs[int(np.argmin(fits))]
    report = run_validation(s)
    np.testing.assert_array_equal(report.stiffness_used["best"], expected)


def test_validation_none_condition_is_torque_free():
    s = new_session(fast_config())
    run_generation(s)
    log = run_trial(s, protocol.validation_stiffness(s, "none"), 5.0)
    assert np.all(log.u_series == 0.0)


# --- days and sessions -------------------------------------------------------


def test_day_accounting():
    s = new_session(fast_config())
    _, report = run_day(s)
    assert len(s.archive) == 35
    assert s.cma.g == 5
    assert report.day == 0
    assert s.day == 1


def test_full_session_accounting():
    s = new_session(fast_config())
    reports = run_session(s)
    assert len(s.archive) == 70
    assert s.cma.g == 10
    assert len(reports) == 2
    assert [r.day for r in reports] == [0, 1]


def test_full_session_determinism():
    cfg = fast_config(master_seed=99)
    a = new_session(cfg)
    run_session(a)
    b = new_session(cfg)
    run_session(b)
    assert session_to_dict(a) == session_to_dict(b)


def test_archive_accounting_invariant():
    s = new_session(fast_config())
    for expected_gens in range(1, 6):
        run_generation(s)
        assert len(s.archive) == expected_gens * s.config.lam


def test_day_gap_decay_flag():
    """Off time holds the deviation by default; opting in decays it
    through the overnight gap."""
    hold = new_session(fast_config(master_seed=2))
    run_day(hold)
    decay = new_session(fast_config(master_seed=2, decay_during_day_gap=True))
    run_day(decay)
    assert decay.human.b < hold.human.b
    assert decay.clock_s == hold.clock_s


# --- persistence -------------------------------------------------------------


def test_save_load_round_trip_empty_session(tmp_path):
    s = new_session(fast_config())
    f = tmp_path / "snap.json"
    save_session(s, f)
    s2 = load_session(f)
    assert session_to_dict(s2) == session_to_dict(s)


def test_save_load_mid_session_continuation(tmp_path):
    cfg = fast_config(master_seed=5)
    ref = new_session(cfg)
    run_session(ref)
    reference = session_to_dict(ref)

    s = new_session(cfg)
    run_generation(s)
    run_generation(s)
    f = tmp_path / "snap.json"
    save_session(s, f)
    resumed = load_session(f)
    run_session(resumed)
    assert session_to_dict(resumed) == reference


def test_resume_at_every_trial_boundary_chained(tmp_path):
    """Save + reload after every completed trial; the chained run must
    reproduce the uninterrupted archive byte for byte."""
    cfg = fast_config(master_seed=42, days=1, generations_per_day=2)
    ref = new_session(cfg)
    run_session(ref)
    reference = json.dumps(session_to_dict(ref)["archive"])

    s = new_session(cfg)
    f = tmp_path / "chain.json"
    while s.day < cfg.days:
        while s.gen_in_day < cfg.generations_per_day:
            candidates = protocol.ensure_pending(s)
            for k in range(s.trial_in_gen, cfg.lam):
                log = run_trial(s, candidates[k], cfg.trial_s)
                protocol.record_candidate_result(s, k, score_trial(s, log))
                save_session(s, f)
                s = load_session(f)
                candidates = s.pending
            protocol.finish_generation(s)
            save_session(s, f)
            s = load_session(f)
        run_validation(s)
        protocol.advance_day_boundary(s)
    assert json.dumps(session_to_dict(s)["archive"]) == reference


def test_load_rejects_truncated_file(tmp_path):
    s = new_session(fast_config())
    f = tmp_path / "snap.json"
    save_session(s, f)
    f.write_text(f.read_text()[:100])
    with pytest.raises(SnapshotCorruptError):
        load_session(f)


def test_load_rejects_version_mismatch(tmp_path):
    s = new_session(fast_config())
    f = tmp_path / "snap.json"
    doc = session_to_dict(s)
    doc["version"] = 99
    f.write_text(json.dumps(doc))
    with pytest.raises(SnapshotVersionError):
        load_session(f)


def test_load_missing_file_is_corrupt_error(tmp_path):
    with pytest.raises(SnapshotCorruptError):
        load_session(tmp_path / "nope.json")


# --- stream isolation --------------------------------------------------------


def test_streams_isolated_by_label():
    a = protocol._stream(0, protocol._STREAM_SAMPLER)
    b = protocol._stream(0, protocol._STREAM_PLANT)
    assert a.standard_normal(4).tolist() != b.standard_normal(4).tolist()


def test_validation_consumption_does_not_shift_sampler():
    """Consuming the validation stream must not alter sampled candidates."""
    cfg = fast_config(master_seed=31)
    a = new_session(cfg)
    run_generation(a)
    xs_a = protocol.ensure_pending(a)

    b = new_session(cfg)
    b.rng_validation.permutation(4)  # extra validation-stream consumption
    run_generation(b)
    xs_b = protocol.ensure_pending(b)
    np.testing.assert_array_equal(xs_a, xs_b)
