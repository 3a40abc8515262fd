"""Episode driver, threshold sweeps and the CSV they produce."""
from __future__ import annotations

import csv
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, TextIO

import numpy as np

from .exceptions import GPOError, InfeasibleThresholdError
from .gpomcp import PlannerConfig, commit, new_tree, plan_action
from .guard import check_feasible, guard_tables, is_allowed
from .model import PomdpModel, discounted_prefix, sample_step
from .support import FutureValueTable, SupportGame

CSV_HEADER = ("threshold", "episode", "steps", "payoff_lb", "payoff_ub",
              "guarantee_ok", "mean_latency_ms", "seed")

# relative slack when comparing a certified bound against the threshold
CERT_RTOL = 1e-9


def default_horizon(model: PomdpModel, precision: float = 1e-6) -> int:
    """Smallest ``H`` with ``γ^H·max|r|/(1-γ) < precision``."""
    g = model.discount
    tail = model.max_abs_reward / (1.0 - g)
    h = 0
    while tail >= precision:
        tail *= g
        h += 1
        if g == 0.0:
            break
    return h


def meets(value: float, t: float) -> bool:
    return bool(value >= t - CERT_RTOL * max(1.0, abs(t)))


@dataclass
class EpisodeRecord:
    threshold: float
    episode: int
    steps: int
    payoff_lb: float
    payoff_ub: float
    guarantee_ok: bool
    mean_latency_ms: float
    seed: int
    absorbed: bool = False
    violations: int = 0
    error: Optional[str] = None
    latencies_ms: list = field(default_factory=list, repr=False)
    actions: list = field(default_factory=list, repr=False)

    @property
    def payoff(self) -> float:
        return 0.5 * (self.payoff_lb + self.payoff_ub)

    def csv_row(self, timing: bool = True) -> list:
        return [_num(self.threshold), self.episode, self.steps, _num(self.payoff_lb),
                _num(self.payoff_ub), "true" if self.guarantee_ok else "false",
                _num(self.mean_latency_ms if timing else 0.0), self.seed]


def _num(x: float) -> str:
    return format(float(x), ".12g")


def run_episode(model: PomdpModel, game: SupportGame, table: FutureValueTable, t: float,
                cfg: PlannerConfig, seed: int, *, episode: int = 0,
                horizon: Optional[int] = None) -> EpisodeRecord:
    """Play one episode against a simulated environment.

    The episode stops when the tracked support becomes absorbing (the payoff
    is then exact) or after ``horizon`` steps, in which case the payoff is an
    interval covering every continuation. Faults are recorded on the returned
    record rather than raised.
    """
    if not check_feasible(table, t):
        raise InfeasibleThresholdError(
            f"threshold {t} exceeds the guaranteed value {min(table.values[b] for b in game.initial)}"
        )
    H = default_horizon(model) if horizon is None else int(horizon)
    g = model.discount
    rng = np.random.default_rng(seed)
    tables = guard_tables(game, table)
    s = int(rng.choice(model.n_states, p=model.initial_belief))
    tree = new_tree(model, game, table, t, cfg, rng, observation=int(model.obs_map[s]))
    rewards, latencies, actions = [], [], []
    violations = 0
    error = None
    absorbed = False
    for _ in range(H):
        if tables.absorbing[tree.guard.support]:
            absorbed = True
            break
        try:
            t0 = time.perf_counter()
            a = plan_action(tree, rng)
            latencies.append(1e3 * (time.perf_counter() - t0))
            if not is_allowed(tables, tree.guard, a):
                violations += 1
            s, o, r = sample_step(model, s, a, rng)
            commit(tree, a, o, rng)
        except GPOError as exc:
            error = f"{type(exc).__name__}: {exc}"
            break
        rewards.append(r)
        actions.append(a)
        if not tree.guard.rem <= table.values[tree.guard.support]:
            violations += 1
    else:
        absorbed = bool(tables.absorbing[tree.guard.support])

    prefix = discounted_prefix(rewards, g)
    n = len(rewards)
    if absorbed:
        lb = ub = prefix
    else:
        scale = g ** n
        rmin, rmax = float(model.reward.min()), float(model.reward.max())
        lo_tail = rmin / (1.0 - g) if g < 1 else -math.inf
        hi_tail = rmax / (1.0 - g) if g < 1 else math.inf
        if error is None and violations == 0:
            # the remaining play stays safe, so it earns at least rem
            lo_tail = max(lo_tail, tree.guard.rem)
        lb = prefix + scale * lo_tail
        ub = prefix + scale * hi_tail
    ok = error is None and violations == 0 and meets(lb, t)
    return EpisodeRecord(
        float(t), episode, n, lb, ub, ok,
        float(np.mean(latencies)) if latencies else 0.0, int(seed),
        absorbed, violations, error, latencies, actions,
    )


def parse_thresholds(text: str) -> list:
    """``a:b:step`` (inclusive of ``b`` up to rounding) or a comma list."""
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"bad threshold range {text!r}; expected a:b:step")
        a, b, step = parts
        n = int(math.floor((b - a) / step + 1e-9))
        return [a + i * step for i in range(n + 1)]
    return [float(x) for x in text.split(",") if x.strip()]


_WORKER: dict = {}


def _init_worker(model, game, table, cfg, horizon):
    _WORKER.update(model=model, game=game, table=table, cfg=cfg, horizon=horizon)


def _worker_episode(args):
    t, episode, seed = args
    w = _WORKER
    return run_episode(w["model"], w["game"], w["table"], t, w["cfg"], seed,
                       episode=episode, horizon=w["horizon"])


def worker_count(requested: Optional[int] = None) -> int:
    n = requested or os.cpu_count() or 1
    env = os.environ.get("GPO_THREADS")
    if env:
        n = min(n, max(1, int(env)))
    return max(1, n)


def run_sweep(model: PomdpModel, game: SupportGame, table: FutureValueTable,
              thresholds: Sequence[float], episodes: int, cfg: PlannerConfig,
              out: Optional[TextIO] = None, *, base_seed: int = 0,
              horizon: Optional[int] = None, workers: Optional[int] = None,
              timing: bool = True) -> list:
    """Run ``episodes`` episodes per threshold and stream them as CSV.

    Rows appear in threshold then episode order regardless of how many
    workers ran them. Thresholds above the guaranteed value produce a
    ``#warning`` row and are skipped.
    """
    writer = csv.writer(out, lineterminator="\n") if out is not None else None
    if writer:
        writer.writerow(CSV_HEADER)
    n_workers = worker_count(workers)
    pool = None
    if n_workers > 1:
        pool = ProcessPoolExecutor(n_workers, initializer=_init_worker,
                                   initargs=(model, game, table, cfg, horizon))
    records = []
    try:
        for t in thresholds:
            if not check_feasible(table, t):
                if writer:
                    best = min(table.values[b] for b in game.initial)
                    writer.writerow(["#warning", _num(t), f"infeasible: exceeds guaranteed value {_num(best)}"])
                continue
            jobs = [(float(t), i, base_seed + i) for i in range(episodes)]
            if pool is None:
                recs = (run_episode(model, game, table, t, cfg, s, episode=i, horizon=horizon)
                        for _, i, s in jobs)
            else:
                recs = pool.map(_worker_episode, jobs, chunksize=max(1, episodes // (4 * n_workers)))
            batch = []
            for r in recs:
                batch.append(r)
                if writer:
                    writer.writerow(r.csv_row(timing))
            records.extend(batch)
            if writer:
                pay = [r.payoff for r in batch]
                sd = statistics.stdev(pay) if len(pay) > 1 else 0.0
                writer.writerow(["#summary", _num(t), len(pay), _num(statistics.fmean(pay) if pay else math.nan), _num(sd)])
    finally:
        if pool is not None:
            pool.shutdown()
    return records


def summarize(records: Iterable[EpisodeRecord]) -> dict:
    """Mean and sample standard deviation of the payoff per threshold."""
    by_t: dict = {}
    for r in records:
        by_t.setdefault(r.threshold, []).append(r.payoff)
    return {t: (statistics.fmean(v), statistics.stdev(v) if len(v) > 1 else 0.0, len(v))
            for t, v in by_t.items()}


def latency_report(records: Iterable[EpisodeRecord], preprocess_s: Optional[float] = None) -> dict:
    """Per-decision latency statistics over the successful episodes."""
    lat = [x for r in records if r.error is None for x in r.latencies_ms]
    if not lat:
        raise ValueError("no decisions to report on")
    arr = np.asarray(lat)
    return {
        "decisions": len(lat),
        "mean_ms": float(arr.sum() / len(arr)),
        "median_ms": float(np.median(arr)),
        "p99_ms": float(np.percentile(arr, 99)),
        "preprocess_s": preprocess_s,
    }
