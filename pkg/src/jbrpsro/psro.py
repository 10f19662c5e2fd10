"""The PSRO loop with independent, joint-experience and hybrid oracles.

A run is a fixed number of iterations.  Each iteration solves the current
restricted game with projected replicator dynamics, computes one new policy
per player, extends the restricted game and records the exact NashConv of the
re-solved meta-profile.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .dataset import ExplorationSpec, collect, estimate_model, perturb
from .games import BehaviorPolicy, MarkovGame, build_game, expected_payoff, random_policy, realization_plan, uniform_policy
from .induced import behavior_from_plan
from .meta import EmpiricalGame, MetaProfile, extend, projected_replicator_dynamics
from .oracles import SpiConfig, exact_best_response, independent_br, naive_jbr, spi_jbr

ORACLES = ("ibr", "naive", "spi")
EXPLORATION_DEFAULTS = {"none": 0.0, "random": 0.1, "targeted": 0.5}
CSV_COLUMNS = (
    "iteration",
    "oracle_kind",
    "nashconv",
    "min_nashconv_so_far",
    "cumulative_br_episodes",
    "br_value_p0",
    "br_value_p1",
    "wall_time_s",
)
METRIC_COLUMNS = CSV_COLUMNS[:-1]


def prd_readout(average_from: float) -> str:
    if average_from == 0.0:
        return "average of the whole trajectory"
    return f"average of iterates from fraction {average_from!r} of the trajectory on"


_METHOD = re.compile(r"^(psro|jbr|hbr(\d*))(?:-(spi|dr|dt))?$")


@dataclass
class RunConfig:
    """One PSRO run.

    ``oracle`` is the non-hybrid oracle (``ibr``, ``naive`` or ``spi``);
    with ``hybrid_k > 0`` iterations ``t`` with ``t % hybrid_k == 0`` use
    independent best responses instead.  ``n_wedge=None`` selects the
    per-iteration sweep over ``spi_range``.
    """

    game: str = "kuhn"
    iterations: int = 100
    oracle: str = "ibr"
    budget: int = 10_000
    exploration: str = "none"
    delta: float = 0.0
    n_wedge: int | None = None
    spi_range: tuple[int, int] = (0, 50)
    hybrid_k: int = 0
    seed: int = 0
    prd_steps: int = 100_000
    prd_dt: float = 1e-3
    prd_floor: float = 1e-10
    prd_average_from: float = 0.0
    out: str | None = None
    method: str = ""

    def __post_init__(self):
        self.spi_range = tuple(int(v) for v in self.spi_range)
        self.validate()

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")
        if self.hybrid_k < 0:
            raise ValueError("hybrid_k must be >= 0")
        if self.oracle not in ORACLES:
            raise ValueError(f"unknown oracle {self.oracle!r}")
        if self.exploration not in EXPLORATION_DEFAULTS:
            raise ValueError(f"unknown exploration kind {self.exploration!r}")
        if self.oracle == "ibr" and (self.hybrid_k or self.exploration != "none"):
            raise ValueError("independent-BR runs take no hybrid period or exploration")
        lo, hi = self.spi_range
        if not 0 <= lo <= hi:
            raise ValueError("spi_range must satisfy 0 <= lo <= hi")
        if self.n_wedge is not None and self.n_wedge < 0:
            raise ValueError("n_wedge must be >= 0")
        if self.prd_steps < 1 or self.prd_dt <= 0:
            raise ValueError("prd_steps must be >= 1 and prd_dt positive")
        if not 0.0 <= self.prd_average_from < 1.0:
            raise ValueError("prd_average_from must lie in [0, 1)")

    @property
    def label(self) -> str:
        return self.method or method_name(self)

    @classmethod
    def from_method(cls, method: str, delta: float | None = None, hybrid_k: int | None = None, **kw) -> "RunConfig":
        """Build a config from ``psro``, ``jbr[-spi|-dr|-dt]`` or ``hbr[<k>][-spi|-dr|-dt]``.

        A bare ``hbr`` takes its period from ``hybrid_k``.  ``delta=None``
        selects the default rate of the exploration kind.
        """
        m = _METHOD.match(method.strip().lower())
        if not m:
            raise ValueError(f"unknown method {method!r}")
        base, k, suffix = m.group(1), m.group(2), m.group(3)
        if base == "psro":
            if suffix:
                raise ValueError("psro takes no suffix")
            if delta:
                raise ValueError("psro takes no exploration delta")
            return cls(oracle="ibr", **kw)
        oracle = "spi" if suffix == "spi" else "naive"
        exploration = {"dr": "random", "dt": "targeted"}.get(suffix, "none")
        if delta is None:
            delta = EXPLORATION_DEFAULTS[exploration]
        elif exploration == "none" and delta:
            raise ValueError(f"{method} takes no exploration delta")
        hybrid = 0
        if base.startswith("hbr"):
            hybrid = int(k) if k else int(hybrid_k or 0)
            if hybrid < 1:
                raise ValueError(f"{method}: hybrid period must be >= 1")
        return cls(oracle=oracle, exploration=exploration, delta=float(delta), hybrid_k=hybrid, **kw)


def method_name(cfg: RunConfig) -> str:
    if cfg.oracle == "ibr":
        return "psro"
    base = f"hbr{cfg.hybrid_k}" if cfg.hybrid_k else "jbr"
    suffix = {"random": "-dr", "targeted": "-dt"}.get(cfg.exploration, "")
    if cfg.oracle == "spi":
        suffix = "-spi" + suffix
    return base + suffix


@dataclass
class IterationRecord:
    iteration: int
    oracle_kind: str
    nashconv: float
    min_nashconv_so_far: float
    cumulative_br_episodes: int
    br_values: list[float]
    wall_time_s: float
    n_wedge: list[int] | None = None

    def csv_row(self) -> list[str]:
        return [
            str(self.iteration),
            self.oracle_kind,
            repr(float(self.nashconv)),
            repr(float(self.min_nashconv_so_far)),
            str(self.cumulative_br_episodes),
            *(repr(float(v)) for v in self.br_values),
            f"{self.wall_time_s:.6f}",
        ]


# --------------------------------------------------------------------------
# Schedule and budget
# --------------------------------------------------------------------------


def iteration_kind(cfg: RunConfig, t: int) -> str:
    """Oracle used at 1-based iteration ``t``."""
    if cfg.oracle == "ibr" or (cfg.hybrid_k and t % cfg.hybrid_k == 0):
        return "ibr"
    return cfg.oracle


def iteration_charge(cfg: RunConfig, t: int, num_players: int = 2) -> int:
    return cfg.budget * (num_players if iteration_kind(cfg, t) == "ibr" else 1)


def total_episodes(cfg: RunConfig, num_players: int = 2) -> int:
    """Closed form: ``T*b`` for joint runs plus ``(n-1)*b`` per independent iteration."""
    T, b = cfg.iterations, cfg.budget
    if cfg.oracle == "ibr":
        return num_players * T * b
    ibr_iters = T // cfg.hybrid_k if cfg.hybrid_k else 0
    return T * b + ibr_iters * b * (num_players - 1)


# --------------------------------------------------------------------------
# NashConv
# --------------------------------------------------------------------------


def meta_behaviors(game: MarkovGame, profile: MetaProfile, eg: EmpiricalGame) -> list[BehaviorPolicy]:
    """Behavior policies realization-equivalent to the meta-strategy mixtures."""
    out = []
    for p in range(eg.num_players):
        if len(eg._plans) == eg.num_players:
            plans = eg._plans[p]
        else:
            plans = np.array([realization_plan(game, pol) for pol in eg.policy_sets[p]])
        out.append(behavior_from_plan(game, p, profile.probs[p] @ plans))
    return out


def exploitability_terms(game: MarkovGame, behaviors: Sequence[BehaviorPolicy]) -> tuple[np.ndarray, np.ndarray]:
    """(best-response values, current values) per player."""
    u = expected_payoff(game, behaviors)
    br = np.array([exact_best_response(game, p, behaviors).value for p in range(game.num_players)])
    return br, u


def nashconv(game: MarkovGame, profile: MetaProfile, eg: EmpiricalGame) -> float:
    """Sum over players of the exact best-response gain against the meta-profile."""
    br, u = exploitability_terms(game, meta_behaviors(game, profile, eg))
    return float((br - u).sum())


def profile_nashconv(game: MarkovGame, behaviors: Sequence[BehaviorPolicy]) -> float:
    br, u = exploitability_terms(game, behaviors)
    return float((br - u).sum())


# --------------------------------------------------------------------------
# The loop
# --------------------------------------------------------------------------


class PsroRun:
    """Mutable state of one run; :meth:`step` performs one iteration."""

    def __init__(self, cfg: RunConfig, game: MarkovGame | None = None):
        self.cfg = cfg
        self.game = game or build_game(cfg.game)
        if self.game.num_players != 2:
            raise NotImplementedError("the driver supports two-player games")
        g = self.game
        self.eg = extend(EmpiricalGame.empty(2), [uniform_policy(g, p) for p in range(2)], g)
        self.meta = self._solve()
        self.prev_br: list[BehaviorPolicy] | None = None
        self.records: list[IterationRecord] = []
        self.episodes = 0
        self.best = math.inf
        self.collect_calls = 0

    def _solve(self) -> MetaProfile:
        c = self.cfg
        return projected_replicator_dynamics(self.eg, c.prd_steps, c.prd_dt, c.prd_floor, c.prd_average_from)

    def _rng_seed(self, t: int, stream: int) -> list[int]:
        return [self.cfg.seed, t, stream]

    def _exploration(self) -> ExplorationSpec:
        c = self.cfg
        if c.exploration == "targeted":
            if self.prev_br is None:
                return ExplorationSpec()
            return ExplorationSpec(c.delta, "targeted", self.prev_br)
        return ExplorationSpec(c.delta, c.exploration)

    def _spi(self, data, player, sigma, model):
        """SPI response; with no fixed threshold, the best over the sweep by exact value."""
        c = self.cfg
        g = self.game
        if c.n_wedge is not None:
            return spi_jbr(data, g, player, SpiConfig(c.n_wedge, sigma[player]), model), c.n_wedge
        best = None
        seen: dict[bytes, None] = {}
        lo, hi = c.spi_range
        legal = g.legal_mask[player]
        for n in range(lo, hi + 1):
            key = ((model.counts < n) & legal).tobytes()
            if key in seen:
                continue
            seen[key] = None
            res = spi_jbr(data, g, player, SpiConfig(n, sigma[player]), model)
            prof = list(sigma)
            prof[player] = res.policy
            v = float(expected_payoff(g, prof)[player])
            if best is None or v > best[0]:
                best = (v, res, n)
        return best[1], best[2]

    def step(self) -> IterationRecord:
        c = self.cfg
        g = self.game
        t = len(self.records) + 1
        start = time.perf_counter()
        sigma = meta_behaviors(g, self.meta, self.eg)
        kind = iteration_kind(c, t)
        wedges = None
        if kind == "ibr":
            new = [independent_br(g, p, sigma, c.budget, self._rng_seed(t, p)).policy for p in range(2)]
        else:
            data = collect(g, sigma, c.budget, self._rng_seed(t, 99), exploration=self._exploration())
            self.collect_calls += 1
            new, wedges = [], []
            for p in range(2):
                model = estimate_model(data, p)
                if kind == "spi":
                    res, n = self._spi(data, p, sigma, model)
                    wedges.append(n)
                else:
                    res = naive_jbr(data, g, p, sigma[p], model)
                new.append(res.policy)
        self.episodes += iteration_charge(c, t)
        br_values = []
        for p in range(2):
            prof = list(sigma)
            prof[p] = new[p]
            br_values.append(float(expected_payoff(g, prof)[p]))
        self.prev_br = new
        self.eg = extend(self.eg, new, g)
        self.meta = self._solve()
        nc = nashconv(g, self.meta, self.eg)
        self.best = min(self.best, nc)
        rec = IterationRecord(t, kind, nc, self.best, self.episodes, br_values, time.perf_counter() - start, wedges)
        self.records.append(rec)
        return rec

    def run(self, on_record: Callable[[IterationRecord], None] | None = None) -> list[IterationRecord]:
        while len(self.records) < self.cfg.iterations:
            rec = self.step()
            if on_record:
                on_record(rec)
        return self.records


def run_metadata(cfg: RunConfig) -> dict:
    meta = dataclasses.asdict(cfg)
    meta["spi_range"] = list(cfg.spi_range)
    return {
        "config": meta,
        "method": cfg.label,
        "seed": cfg.seed,
        "library_version": __version__,
        "numpy_version": np.__version__,
        "prd_readout": prd_readout(cfg.prd_average_from),
        "csv_columns": list(CSV_COLUMNS),
        "expected_total_episodes": total_episodes(cfg),
    }


def run_psro(cfg: RunConfig, game: MarkovGame | None = None, csv_path=None) -> list[IterationRecord]:
    """Run PSRO under ``cfg``; rows are appended to ``csv_path`` as they complete."""
    runner = PsroRun(cfg, game)
    if csv_path is None:
        return runner.run()
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path.with_suffix(".json"), "w") as f:
        json.dump(run_metadata(cfg), f, indent=2, sort_keys=True)
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        f.flush()

        def emit(rec: IterationRecord) -> None:
            writer.writerow(rec.csv_row())
            f.flush()

        return runner.run(emit)


# --------------------------------------------------------------------------
# Perturbation bound check
# --------------------------------------------------------------------------


@dataclass
class DeltaReport:
    delta: float
    trials: int = 0
    violations: int = 0
    max_gap: float = 0.0
    max_measured_delta: float = 0.0
    min_slack: float = math.inf
    max_ratio: float = 0.0


@dataclass
class TheoryReport:
    game: str
    payoff_range: float
    rows: list[DeltaReport] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return sum(r.violations for r in self.rows)

    def render(self) -> str:
        lines = [f"perturbation bound check on {self.game} (R = payoff range)"]
        lines.append("delta,trials,violations,max_gap,max_measured_delta,min_slack,max_gap_over_bound")
        for r in self.rows:
            if r.trials:
                lines.append(
                    f"{r.delta!r},{r.trials},{r.violations},{r.max_gap!r},"
                    f"{r.max_measured_delta!r},{r.min_slack!r},{r.max_ratio!r}"
                )
        return "\n".join(lines) + "\n"


def _perturbation_size(a: BehaviorPolicy, b: BehaviorPolicy) -> float:
    """Largest per-infostate L1 distance between two behavior policies."""
    d = np.abs(np.nan_to_num(a.probs) - np.nan_to_num(b.probs)).sum(axis=1)
    return float(d.max(initial=0.0))


def theory_check_perturbation(
    game: MarkovGame | str,
    trials: int,
    deltas: Sequence[float],
    seed: int = 0,
    resample_matrix: bool = True,
    tol: float = 1e-12,
) -> TheoryReport:
    """Check ``u_i(BR(perturbed), sigma_-i) >= max_pi u_i(pi, sigma_-i) - R * Delta``.

    Each trial draws a random profile and perturbs it toward the uniform
    policy (even trials) or toward another random policy (odd trials).  For
    matrix games with ``resample_matrix`` every trial also draws a fresh
    payoff matrix.  ``Delta`` is measured on the opponent's policy.
    """
    if isinstance(game, str):
        game = build_game(game)
    gid = game.id
    rng = np.random.default_rng(seed)
    R = game.payoff_range
    report = TheoryReport(str(gid), R)
    for delta in deltas:
        if not 0.0 <= delta <= 1.0:
            raise ValueError("deltas must lie in [0, 1]")
        row = DeltaReport(float(delta))
        for trial in range(trials):
            g = game
            if gid.kind == "matrix" and resample_matrix:
                g = build_game(f"matrix:{int(rng.integers(2**31))}:{gid.rows}x{gid.cols}")
            Rg = g.payoff_range
            sigma = [random_policy(g, p, rng) for p in range(g.num_players)]
            if trial % 2 == 0:
                spec = ExplorationSpec(delta, "random")
            else:
                spec = ExplorationSpec(delta, "targeted", [random_policy(g, p, rng) for p in range(g.num_players)])
            tilde = perturb(sigma, spec, g)
            for i in range(g.num_players):
                d = max(_perturbation_size(sigma[j], tilde[j]) for j in range(g.num_players) if j != i)
                best = exact_best_response(g, i, sigma).value
                pi_hat = exact_best_response(g, i, tilde).policy
                prof = list(sigma)
                prof[i] = pi_hat
                got = float(expected_payoff(g, prof)[i])
                gap = best - got
                bound = Rg * d
                row.max_gap = max(row.max_gap, gap)
                row.max_measured_delta = max(row.max_measured_delta, d)
                row.min_slack = min(row.min_slack, bound - gap)
                if bound > 0:
                    row.max_ratio = max(row.max_ratio, gap / bound)
                if gap > bound + tol:
                    row.violations += 1
            row.trials += 1
        report.rows.append(row)
    return report
