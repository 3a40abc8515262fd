import io
import math

import numpy as np
import pytest

from gpo.benchmarks import gen_hallway
from gpo.exceptions import InfeasibleThresholdError
from gpo.gpomcp import PlannerConfig
from gpo.harness import (
    CSV_HEADER,
    EpisodeRecord,
    default_horizon,
    latency_report,
    meets,
    parse_thresholds,
    run_episode,
    run_sweep,
    summarize,
    worker_count,
)
from gpo.support import enumerate_valid_supports, value_iteration

CFG = PlannerConfig(simulations=256)


def test_default_horizon(tiger):
    h = default_horizon(tiger)
    assert 0.5**h * 200 < 1e-6 <= 0.5 ** (h - 1) * 200


def test_meets():
    assert meets(12.0, 12.0)
    assert meets(12.0 - 1e-12, 12.0)
    assert not meets(11.99, 12.0)
    assert type(meets(1, 0)) is bool


@pytest.mark.parametrize("seed", range(20))
def test_episode_guarantee(tiger, tiger_game, tiger_table, seed):
    rec = run_episode(tiger, tiger_game, tiger_table, 12, CFG, seed)
    assert rec.guarantee_ok
    assert rec.error is None and rec.violations == 0
    assert rec.payoff_lb >= 12
    assert rec.absorbed and rec.payoff_lb == rec.payoff_ub
    assert len(rec.latencies_ms) <= rec.steps


def test_infeasible_rejected(tiger, tiger_game, tiger_table):
    with pytest.raises(InfeasibleThresholdError):
        run_episode(tiger, tiger_game, tiger_table, 30, CFG, 0)


def test_episode_deterministic(tiger, tiger_game, tiger_table):
    a = run_episode(tiger, tiger_game, tiger_table, 5, CFG, 7)
    b = run_episode(tiger, tiger_game, tiger_table, 5, CFG, 7)
    assert a.csv_row(False) == b.csv_row(False)
    assert a.actions == b.actions


def test_truncated_episode_interval(tiger, tiger_game, tiger_table):
    rec = run_episode(tiger, tiger_game, tiger_table, 5, CFG, 3, horizon=1)
    assert rec.steps == 1
    if not rec.absorbed:
        assert rec.payoff_lb < rec.payoff_ub
    assert rec.guarantee_ok


def test_split_root_model():
    m = gen_hallway(5, 3, traps=[(2, 1)])
    game = enumerate_valid_supports(m)
    table = value_iteration(game)
    t = min(float(table.values[b]) for b in game.initial)
    for seed in range(5):
        rec = run_episode(m, game, table, t, PlannerConfig(simulations=128), seed)
        assert rec.guarantee_ok, rec


def test_parse_thresholds():
    assert parse_thresholds("0:15:5") == [0, 5, 10, 15]
    assert parse_thresholds("0:1:0.1")[-1] == pytest.approx(1.0)
    assert len(parse_thresholds("0:1:0.1")) == 11
    assert parse_thresholds("0,2.5, 8") == [0, 2.5, 8]
    with pytest.raises(ValueError):
        parse_thresholds("0:5")
    with pytest.raises(ValueError):
        parse_thresholds("0:5:0")


def _sweep_text(tiger, tiger_game, tiger_table, thresholds, n=10, workers=1):
    buf = io.StringIO()
    recs = run_sweep(tiger, tiger_game, tiger_table, thresholds, n, CFG, buf,
                     workers=workers, timing=False)
    return buf.getvalue(), recs


def test_sweep_csv(tiger, tiger_game, tiger_table):
    text, recs = _sweep_text(tiger, tiger_game, tiger_table, [0, 12, 30])
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[0] == "threshold,episode,steps,payoff_lb,payoff_ub,guarantee_ok,mean_latency_ms,seed"
    summaries = [l for l in lines if l.startswith("#summary")]
    assert [l.split(",")[1] for l in summaries] == ["0", "12"]
    assert lines[-1].startswith("#warning,30,infeasible")
    rows = [l.split(",") for l in lines[1:] if not l.startswith("#")]
    assert len(rows) == 20 == len(recs)
    assert all(r[5] == "true" and r[6] == "0" for r in rows)
    assert [int(r[1]) for r in rows] == list(range(10)) * 2
    assert [int(r[7]) for r in rows] == list(range(10)) * 2
    for r in rows:
        assert float(r[3]) >= float(r[0])
    mean, sd, n = summarize(recs)[12.0]
    s = summaries[1].split(",")
    assert int(s[2]) == n == 10
    assert float(s[3]) == pytest.approx(mean, rel=1e-11)
    assert float(s[4]) == pytest.approx(sd, rel=1e-11)


def test_sweep_byte_stable(tiger, tiger_game, tiger_table):
    a, _ = _sweep_text(tiger, tiger_game, tiger_table, [0, 5])
    b, _ = _sweep_text(tiger, tiger_game, tiger_table, [0, 5])
    assert a == b


def test_sweep_parallel_matches_serial(tiger, tiger_game, tiger_table, monkeypatch):
    monkeypatch.delenv("GPO_THREADS", raising=False)
    a, _ = _sweep_text(tiger, tiger_game, tiger_table, [5], n=6, workers=1)
    b, _ = _sweep_text(tiger, tiger_game, tiger_table, [5], n=6, workers=2)
    assert a == b


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("GPO_THREADS", "1")
    assert worker_count(8) == 1
    monkeypatch.setenv("GPO_THREADS", "3")
    assert worker_count(8) == 3
    assert worker_count(2) == 2


def _rec(lat, error=None):
    return EpisodeRecord(0.0, 0, len(lat), 0.0, 0.0, True, 0.0, 0, error=error, latencies_ms=lat)


def test_latency_report():
    rep = latency_report([_rec([1.0, 2.0]), _rec([4.0]), _rec([100.0], error="boom")], 0.25)
    assert rep["decisions"] == 3
    assert rep["mean_ms"] == 7.0 / 3
    assert rep["median_ms"] == 2.0
    assert rep["preprocess_s"] == 0.25
    with pytest.raises(ValueError):
        latency_report([_rec([1.0], error="x")])


def test_tiger_latency_scale(tiger, tiger_game, tiger_table):
    recs = [run_episode(tiger, tiger_game, tiger_table, 5, CFG, s) for s in range(5)]
    rep = latency_report(recs)
    assert rep["mean_ms"] < 1000


def test_summary_std_is_sample():
    recs = [EpisodeRecord(1.0, i, 1, v, v, True, 0.0, i) for i, v in enumerate([1.0, 3.0])]
    mean, sd, n = summarize(recs)[1.0]
    assert (mean, n) == (2.0, 2)
    assert sd == pytest.approx(math.sqrt(2))
