"""Restricted empirical game and the projected-replicator-dynamics solver."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .games import BehaviorPolicy, MarkovGame, expected_payoff, realization_plan, sample_paths


@dataclass
class MetaProfile:
    probs: list[np.ndarray]

    def __post_init__(self):
        for p in self.probs:
            if (p < -1e-12).any() or abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"meta-strategy off the simplex: {p}")


@dataclass
class EmpiricalGame:
    """Policy sets per player and the payoff tensor over all pure profiles.

    ``payoffs`` has shape ``(n, |X_1|, ..., |X_n|)``.  ``mode`` is
    ``"exact"`` or ``"rollout:<episodes>"``.
    """

    policy_sets: list[list[BehaviorPolicy]]
    payoffs: np.ndarray
    mode: str = "exact"
    _plans: list[np.ndarray | None] = field(default_factory=list, repr=False)

    @classmethod
    def empty(cls, num_players: int = 2, mode: str = "exact") -> "EmpiricalGame":
        return cls([[] for _ in range(num_players)], np.zeros((num_players,) + (0,) * num_players), mode)

    @property
    def num_players(self) -> int:
        return len(self.policy_sets)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(x) for x in self.policy_sets)

    @property
    def rollout_episodes(self) -> int:
        if not self.mode.startswith("rollout:"):
            raise ValueError(f"{self.mode!r} is not a rollout mode")
        return int(self.mode.split(":", 1)[1])


def extend(
    eg: EmpiricalGame,
    new_policies: Sequence[BehaviorPolicy],
    game: MarkovGame,
    rng: np.random.Generator | None = None,
) -> EmpiricalGame:
    """Append one policy per player and fill only the new tensor entries."""
    n = eg.num_players
    if len(new_policies) != n:
        raise ValueError(f"need {n} new policies, got {len(new_policies)}")
    if n != 2:
        raise NotImplementedError("empirical games are two-player")
    old = eg.shape
    sets = [list(x) + [pi] for x, pi in zip(eg.policy_sets, new_policies)]
    k1, k2 = len(sets[0]), len(sets[1])
    payoffs = np.zeros((2, k1, k2))
    payoffs[:, : old[0], : old[1]] = eg.payoffs
    if eg.mode == "exact":
        plans = eg._plans if len(eg._plans) == 2 else [np.zeros((0, game.num_sequences(p))) for p in range(2)]
        plans = [np.vstack([plans[p], realization_plan(game, new_policies[p])[None, :]]) for p in range(2)]
        for p, M in enumerate(game.payoff_matrices):
            # New row against every column, then old rows against the new column.
            payoffs[p, k1 - 1, :] = (M.T @ plans[0][-1]) @ plans[1].T
            payoffs[p, : k1 - 1, k2 - 1] = plans[0][:-1] @ (M @ plans[1][-1])
    else:
        plans = []
        rng = rng if rng is not None else np.random.default_rng(0)
        episodes = eg.rollout_episodes
        cells = [(k1 - 1, j) for j in range(k2)] + [(i, k2 - 1) for i in range(k1 - 1)]
        for i, j in cells:
            paths = sample_paths(game, [sets[0][i], sets[1][j]], episodes, rng)
            final = paths[np.arange(episodes), (paths >= 0).sum(axis=1) - 1]
            payoffs[:, i, j] = game.payoff[final].mean(axis=0)
    return EmpiricalGame(sets, payoffs, eg.mode, plans)


def exact_entry(game: MarkovGame, eg: EmpiricalGame, i: int, j: int) -> np.ndarray:
    return expected_payoff(game, [eg.policy_sets[0][i], eg.policy_sets[1][j]])


# --------------------------------------------------------------------------
# Projected replicator dynamics
# --------------------------------------------------------------------------


@numba.njit(cache=True)
def _project(x, floor):
    # Clip to the floor, then shrink the excess above it so the sum is one.
    k = x.shape[0]
    excess = 0.0
    for j in range(k):
        if x[j] < floor:
            x[j] = floor
        excess += x[j] - floor
    scale = (1.0 - k * floor) / excess
    for j in range(k):
        x[j] = floor + (x[j] - floor) * scale


@numba.njit(cache=True, fastmath=True)
def _prd_kernel(A, Bt, steps, dt, floor, first):
    k1, k2 = A.shape
    x = np.full(k1, 1.0 / k1)
    y = np.full(k2, 1.0 / k2)
    ux = np.empty(k1)
    uy = np.empty(k2)
    sx = np.zeros(k1)
    sy = np.zeros(k2)
    for t in range(steps):
        for a in range(k1):
            s = 0.0
            for b in range(k2):
                s += A[a, b] * y[b]
            ux[a] = s
        for b in range(k2):
            s = 0.0
            for a in range(k1):
                s += Bt[b, a] * x[a]
            uy[b] = s
        vx = 0.0
        for a in range(k1):
            vx += ux[a] * x[a]
        vy = 0.0
        for b in range(k2):
            vy += uy[b] * y[b]
        for a in range(k1):
            x[a] += dt * x[a] * (ux[a] - vx)
        for b in range(k2):
            y[b] += dt * y[b] * (uy[b] - vy)
        _project(x, floor)
        _project(y, floor)
        if t >= first:
            for a in range(k1):
                sx[a] += x[a]
            for b in range(k2):
                sy[b] += y[b]
    m = steps - first
    return sx / m, sy / m


def projected_replicator_dynamics(
    eg: EmpiricalGame | np.ndarray,
    steps: int = 100_000,
    dt: float = 1e-3,
    gamma_floor: float = 1e-10,
    average_from: float = 0.5,
) -> MetaProfile:
    """Replicator dynamics from the uniform profile, projected onto the floored simplex.

    Both players update simultaneously from the previous iterate.  The
    returned profile averages the iterates from step
    ``floor(average_from * steps)`` on; the default is the second half and
    ``average_from=0`` averages the whole trajectory.
    """
    payoffs = eg.payoffs if isinstance(eg, EmpiricalGame) else np.asarray(eg, dtype=float)
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if payoffs.shape[0] != 2 or payoffs.ndim != 3:
        raise NotImplementedError("projected replicator dynamics is implemented for two players")
    k1, k2 = payoffs.shape[1:]
    if not 0.0 <= gamma_floor < 1.0 / max(k1, k2):
        raise ValueError(f"gamma_floor must lie in [0, 1/{max(k1, k2)})")
    A = np.ascontiguousarray(payoffs[0], dtype=np.float64)
    Bt = np.ascontiguousarray(payoffs[1].T, dtype=np.float64)
    if not 0.0 <= average_from < 1.0:
        raise ValueError("average_from must lie in [0, 1)")
    first = min(int(average_from * steps), steps - 1)
    x, y = _prd_kernel(A, Bt, int(steps), float(dt), float(gamma_floor), first)
    return MetaProfile([x / x.sum(), y / y.sum()])


def restricted_regret(eg: EmpiricalGame | np.ndarray, profile: MetaProfile) -> float:
    """Sum over players of the best pure-deviation gain inside the restricted game."""
    payoffs = eg.payoffs if isinstance(eg, EmpiricalGame) else np.asarray(eg, dtype=float)
    x, y = profile.probs
    if payoffs.shape[1:] != (x.size, y.size):
        raise ValueError("profile does not match the payoff tensor")
    row = payoffs[0] @ y
    col = x @ payoffs[1]
    return float(row.max() - x @ row + col.max() - col @ y)


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(eg: EmpiricalGame, path, game: MarkovGame | None = None) -> None:
    arrays = {"payoffs": eg.payoffs}
    for p, pols in enumerate(eg.policy_sets):
        for k, pol in enumerate(pols):
            arrays[f"policy_{p}_{k}"] = pol.probs
    meta = {"mode": eg.mode, "shape": list(eg.shape), "game": None if game is None else str(game.id)}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path, game: MarkovGame | None = None) -> EmpiricalGame:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        if game is not None and meta["game"] not in (None, str(game.id)):
            raise ValueError(f"checkpoint is for {meta['game']}, not {game.id}")
        sets = [[BehaviorPolicy(p, z[f"policy_{p}_{k}"]) for k in range(size)] for p, size in enumerate(meta["shape"])]
        payoffs = z["payoffs"]
    plans = []
    if game is not None and meta["mode"] == "exact":
        plans = [np.array([realization_plan(game, pol) for pol in s]).reshape(len(s), -1) for s in sets]
    return EmpiricalGame(sets, payoffs, meta["mode"], plans)
