from dataclasses import replace

import pytest

from bhsim.cli import main as cli_main
from bhsim.events import read_event_log, serialize_events
from bhsim.perception import ZERO_NOISE
from bhsim.scenario import default_scenario, parse_scenario_text
from bhsim.sim import run_simulation, sweep


def _quick_scenario(seed=0, **overrides):
    """Small, fast scenario: 2 balloons, 60 s cap."""
    s = parse_scenario_text(
        f"seed = {seed}\n"
        "balloons.count = 2\n"
        "sim.duration_limit = 60\n"
    )
    return replace(s, **overrides) if overrides else s


def test_zero_balloons_terminates_immediately():
    s = parse_scenario_text("seed = 0\nballoons.count = 0\n")
    out = run_simulation(s)
    assert out.metrics.balloons_popped == 0
    assert out.metrics.duration == 0.0


def test_run_is_deterministic_byte_identical():
    s = _quick_scenario(seed=5)
    a = run_simulation(s)
    b = run_simulation(s)
    assert serialize_events(a.events) == serialize_events(b.events)
    assert a.metrics.pop_times == b.metrics.pop_times


def test_different_seeds_differ():
    a = run_simulation(_quick_scenario(seed=1))
    b = run_simulation(_quick_scenario(seed=2))
    assert serialize_events(a.events) != serialize_events(b.events)


def test_default_zero_noise_run_pops_everything():
    s = replace(default_scenario(seed=3), noise=ZERO_NOISE)
    out = run_simulation(s)
    assert out.metrics.balloons_popped == 5
    assert out.metrics.pops_total_time is not None
    assert out.metrics.pops_total_time < 600.0
    assert out.metrics.geofence_violations == 0
    assert out.metrics.false_confirms == 0


def test_events_are_ordered_and_round_trip():
    out = run_simulation(_quick_scenario(seed=4))
    seqs = [e["seq"] for e in out.events]
    assert seqs == sorted(seqs) and len(set(seqs)) == len(seqs)
    times = [e["t"] for e in out.events]
    assert all(t0 <= t1 for t0, t1 in zip(times, times[1:]))
    from bhsim.events import emit_line, parse_line

    for e in out.events[:200]:
        assert parse_line(emit_line(e)) == e


def test_alive_count_non_increasing_and_pops_logged():
    out = run_simulation(_quick_scenario(seed=6))
    pops = [e for e in out.events
            if e["kind"] == "pop" and e["data"].get("source") == "world"]
    assert len(pops) == out.metrics.balloons_popped
    assert out.metrics.balloons_popped <= out.metrics.balloons_total


def test_sweep_singleton_matches_run():
    s = _quick_scenario()
    row = sweep(s, [9]).rows[0]
    direct = run_simulation(replace(s, seed=9)).metrics
    assert row.balloons_popped == direct.balloons_popped
    assert row.pop_times == direct.pop_times


def test_sweep_deterministic_and_aggregates():
    s = _quick_scenario()
    a = sweep(s, range(3))
    b = sweep(s, range(3))
    assert [m.pop_times for m in a.rows] == [m.pop_times for m in b.rows]
    assert a.aggregate["runs"] == 3.0
    assert 0.0 <= a.aggregate["success_rate"] <= 1.0
    expected = sum(1 for m in a.rows if m.success) / 3
    assert a.aggregate["success_rate"] == pytest.approx(expected)


def test_sweep_rejects_empty_range():
    with pytest.raises(ValueError):
        sweep(_quick_scenario(), [])


def test_sweep_parallel_matches_sequential(tmp_path):
    s = _quick_scenario()
    seq_dir = tmp_path / "seq"
    par_dir = tmp_path / "par"
    sweep(s, range(3), jobs=1, out_dir=seq_dir)
    sweep(s, range(3), jobs=2, out_dir=par_dir)
    for seed in range(3):
        name = f"events_seed{seed}.jsonl"
        assert (seq_dir / name).read_bytes() == (par_dir / name).read_bytes()


def test_scripted_failure_kills_agent_and_repartitions():
    s = parse_scenario_text(
        "seed = 2\n"
        "agents.count = 2\n"
        "balloons.count = 3\n"
        "fleet.failures = 1:5\n"
        "sim.duration_limit = 40\n"
    )
    out = run_simulation(s)
    failures = [e for e in out.events if e["kind"] == "failure"
                and e["data"].get("reason") == "scripted"]
    assert len(failures) == 1 and failures[0]["agent"] == 1
    assert len(out.cells) == 1 and out.cells[0].agent_id == 0


def test_mission_reaches_approach_and_pops_single_balloon():
    # One balloon dead ahead of the start: with zero noise the agent must
    # commit quickly and pop it well inside the time bounds.
    s = parse_scenario_text(
        "seed = 0\n"
        "balloons.anchors = 65, 20, 2\n"
        "agents.starts = 50, 20, 4\n"
        "sim.duration_limit = 300\n"
    )
    s = replace(s, noise=ZERO_NOISE)
    out = run_simulation(s)
    phases = [e for e in out.events if e["kind"] == "phase"]
    approach_t = next(e["t"] for e in phases if e["data"]["to"] == "approach")
    assert approach_t < 120.0
    assert out.metrics.balloons_popped == 1
    assert out.metrics.pop_times[0][1] < 300.0


# --- CLI ---------------------------------------------------------------------

def _write_scenario(tmp_path, text):
    p = tmp_path / "scenario.cfg"
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_cli_simulate_writes_outputs(tmp_path, capsys):
    scn = _write_scenario(
        tmp_path, "seed = 1\nballoons.count = 1\nsim.duration_limit = 30\n"
    )
    out_dir = tmp_path / "out"
    code = cli_main(["simulate", "--scenario", scn, "--out", str(out_dir)])
    assert code == 0
    assert (out_dir / "events.jsonl").exists()
    assert (out_dir / "metrics.csv").exists()
    events = read_event_log(out_dir / "events.jsonl")
    assert events, "event log should not be empty"
    assert "seed=1" in capsys.readouterr().out


def test_cli_seed_override(tmp_path, capsys):
    scn = _write_scenario(
        tmp_path, "seed = 1\nballoons.count = 1\nsim.duration_limit = 20\n"
    )
    assert cli_main(["simulate", "--scenario", scn, "--seed", "42"]) == 0
    assert "seed=42" in capsys.readouterr().out


def test_cli_config_error_exit_code(tmp_path, capsys):
    scn = _write_scenario(tmp_path, "ballons = 5\n")
    assert cli_main(["simulate", "--scenario", scn]) == 1


def test_cli_missing_file_is_io_error(tmp_path):
    assert cli_main(["simulate", "--scenario", str(tmp_path / "nope.cfg")]) == 3


def test_cli_sweep_outputs_csv(tmp_path, capsys):
    scn = _write_scenario(
        tmp_path, "seed = 0\nballoons.count = 1\nsim.duration_limit = 20\n"
    )
    out_dir = tmp_path / "sweepout"
    code = cli_main(
        ["sweep", "--scenario", scn, "--seeds", "1..3", "--out", str(out_dir)]
    )
    assert code == 0
    lines = (out_dir / "metrics.csv").read_text().strip().splitlines()
    assert lines[0].startswith("seed,")
    assert len(lines) == 4
    for seed in (1, 2, 3):
        assert (out_dir / f"events_seed{seed}.jsonl").exists()


def test_cli_path_and_partition_dumps(tmp_path, capsys):
    scn = _write_scenario(tmp_path, "seed = 0\nagents.count = 2\n")
    assert cli_main(["path", "--scenario", scn]) == 0
    out = capsys.readouterr().out
    assert "path agent=0" in out and "path agent=1" in out

    part_file = tmp_path / "cells.txt"
    assert cli_main(["partition", "--scenario", scn, "--out", str(part_file)]) == 0
    text = part_file.read_text()
    assert "cell agent=0" in text and "cell agent=1" in text


def test_zero_noise_fleet_runs_have_clean_audits():
    # With exact perception, claims make duplicate pursuit impossible and
    # every declared pop corresponds to a dead balloon.
    s = parse_scenario_text(
        "seed = 0\n"
        "agents.count = 3\n"
        "balloons.count = 8\n"
        "sim.tick_rate = 10\n"
        "sim.duration_limit = 300\n"
    )
    for seed in (0, 1, 2, 3):
        out = run_simulation(replace(s, seed=seed, noise=ZERO_NOISE))
        assert out.metrics.duplicate_target_ticks == 0, f"seed {seed}"
        assert out.metrics.false_confirms == 0, f"seed {seed}"
        assert out.metrics.geofence_violations == 0, f"seed {seed}"


def test_confirmed_tracks_never_exceed_alive_balloons_zero_noise():
    # Replay track and pop events: in a zero-noise, zero-false-alarm run
    # the confirmed-track count per agent stays within the alive count.
    s = replace(default_scenario(seed=2), noise=ZERO_NOISE)
    out = run_simulation(s)
    alive = s.balloons.count
    confirmed = {}   # agent -> set of confirmed track ids
    for e in out.events:
        if e["kind"] == "pop" and e["data"].get("source") == "world":
            alive -= 1
        elif e["kind"] == "track":
            agent_set = confirmed.setdefault(e["agent"], set())
            tid = e["data"]["track_id"]
            if e["data"]["event"] == "confirmed":
                agent_set.add(tid)
            elif e["data"]["event"] == "died":
                agent_set.discard(tid)
            # +1 covers the coast window: a just-popped balloon's track
            # stays confirmed for up to k_delete frames after the pop.
            assert len(agent_set) <= max(alive, 0) + 1


def test_sweep_marks_failed_runs_and_continues():
    # An infeasible packing fails every run; rows come back marked
    # instead of aborting the sweep.
    s = parse_scenario_text(
        "seed = 0\nballoons.count = 60\nballoons.min_sep = 20\n"
    )
    out = sweep(s, range(3))
    assert len(out.rows) == 3
    assert all(m.error is not None for m in out.rows)
    assert all("PackingInfeasible" in m.error for m in out.rows)
    assert out.aggregate["errors"] == 3.0
    assert out.aggregate["success_rate"] == 0.0
    assert out.rows[0].csv_row().count(",") == len(
        __import__("bhsim.sim", fromlist=["CSV_HEADER"]).CSV_HEADER.split(",")
    ) - 1


def test_sweep_mixed_failure_marks_only_bad_seed(monkeypatch):
    import bhsim.sim as simmod

    real = simmod.run_simulation

    def flaky(scenario):
        if scenario.seed == 1:
            raise RuntimeError("injected")
        return real(scenario)

    monkeypatch.setattr(simmod, "run_simulation", flaky)
    out = simmod.sweep(_quick_scenario(), [0, 1, 2])
    assert out.rows[1].error == "RuntimeError: injected"
    assert out.rows[0].error is None and out.rows[2].error is None
