"""Response oracles.

* :func:`exact_best_response` -- backward induction over the player's
  sequence tree with terminal values weighted by chance and opponent reach.
* :func:`value_iteration` -- Bellman optimality on a :class:`TabularMdp`,
  optionally with part of each state's action mass pinned to a baseline.
* :func:`independent_br` -- sample-based oracle: private data, model, VI.
* :func:`naive_jbr` / :func:`spi_jbr` -- offline oracles on a shared dataset.

Greedy choices break ties toward the lowest action index.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import EstimatedModel, JointDataset, collect, estimate_model
from .games import BehaviorPolicy, MarkovGame, expected_payoff, realization_plan, uniform_policy
from .induced import TabularMdp


@dataclass
class QTable:
    player: int
    q: np.ndarray  # (S, A), NaN where unsupported
    values: np.ndarray  # (S,)
    residual: float


@dataclass
class SpiConfig:
    n_wedge: int | float
    baseline: BehaviorPolicy

    def __post_init__(self):
        if self.n_wedge < 0:
            raise ValueError("n_wedge must be nonnegative")


@dataclass
class BrResult:
    policy: BehaviorPolicy
    value: float
    episodes_consumed: int
    kind: str


# --------------------------------------------------------------------------
# Exact best response
# --------------------------------------------------------------------------


def exact_best_response(game: MarkovGame, player: int, opponents: Sequence[BehaviorPolicy | None]) -> BrResult:
    """Deterministic best response and its value, by full tree enumeration."""
    i = player
    A = game.max_actions
    if game.num_nodes > game.node_budget:
        raise RuntimeError(f"{game.id}: tree exceeds node budget")
    w = game.terminal_chance * game.terminal_payoff[:, i]
    for p in range(game.num_players):
        if p != i:
            w = w * realization_plan(game, opponents[p])[game.terminal_seq[:, p]]
    nseq = game.num_sequences(i)
    v_seq = np.bincount(game.terminal_seq[:, i], weights=w, minlength=nseq)
    cont = np.zeros(nseq)
    choice = np.zeros(game.num_infostates[i], dtype=np.int64)
    legal = game.legal_mask[i]
    offsets = np.arange(A)
    for level in reversed(game.infostate_levels[i]):
        blk = 1 + level[:, None] * A + offsets
        vals = np.where(legal[level], v_seq[blk] + cont[blk], -np.inf)
        choice[level] = np.argmax(vals, axis=1)
        np.add.at(cont, game.infostate_parent_seq[i][level], vals.max(axis=1))
    value = float(v_seq[0] + cont[0])
    probs = np.zeros(legal.shape)
    probs[np.arange(len(choice)), choice] = 1.0
    return BrResult(BehaviorPolicy(i, probs), value, 0, "exact")


def policy_value(game: MarkovGame, player: int, policy: BehaviorPolicy, profile: Sequence[BehaviorPolicy]) -> float:
    """Exact value of ``policy`` for ``player`` with everyone else from ``profile``."""
    prof = list(profile)
    prof[player] = policy
    return float(expected_payoff(game, prof)[player])


# --------------------------------------------------------------------------
# Value iteration
# --------------------------------------------------------------------------


def _topological_levels(mdp: TabularMdp) -> list[np.ndarray]:
    """States grouped by height (longest path to termination), lowest first."""
    S, A = mdp.num_states, mdp.max_actions
    P = mdp.transitions.tocoo()
    keep = (P.data > 0) & mdp.support.ravel()[P.row]
    src = P.row[keep] // A
    dst = P.col[keep]
    edges = np.unique(np.stack([src, dst], axis=1), axis=0) if src.size else np.zeros((0, 2), dtype=np.int64)
    out_deg = np.bincount(edges[:, 0], minlength=S)
    preds: list[list[int]] = [[] for _ in range(S)]
    for s, d in edges:
        preds[d].append(s)
    height = np.zeros(S, dtype=np.int64)
    queue = deque(np.flatnonzero(out_deg == 0).tolist())
    done = 0
    while queue:
        d = queue.popleft()
        done += 1
        for s in preds[d]:
            height[s] = max(height[s], height[d] + 1)
            out_deg[s] -= 1
            if out_deg[s] == 0:
                queue.append(s)
    if done != S:
        raise ValueError("undiscounted MDP is not episodic (cycle in supported transitions)")
    return [np.flatnonzero(height == h) for h in range(int(height.max()) + 1 if S else 0)]


def _backup_values(q, support, pinned, baseline):
    """State values of the greedy (or baseline-pinned greedy) policy."""
    q0 = np.where(support, np.nan_to_num(q), 0.0)
    masked = np.where(support, q0, -np.inf)
    if pinned is None:
        v = masked.max(axis=1)
        return np.where(np.isfinite(v), v, 0.0)
    eligible = support & ~pinned
    pinned_val = (np.where(pinned, baseline, 0.0) * q0).sum(axis=1)
    free = 1.0 - np.where(pinned, baseline, 0.0).sum(axis=1)
    best = np.where(eligible, q0, -np.inf).max(axis=1)
    has_free = np.isfinite(best)
    fallback = (baseline * q0).sum(axis=1)
    return np.where(has_free, pinned_val + free * np.where(has_free, best, 0.0), fallback)


def value_iteration(
    mdp: TabularMdp,
    tol: float = 1e-9,
    max_sweeps: int = 10_000,
    pinned: np.ndarray | None = None,
    baseline: np.ndarray | None = None,
) -> QTable:
    """Optimal action values on supported pairs.

    With ``pinned`` (bool ``(S, A)``) and ``baseline`` probabilities, each
    state's pinned actions keep their baseline mass and the remainder goes to
    the best supported unpinned action; states with no such action follow
    the baseline.  Unsupported successors bootstrap with value 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if pinned is not None and baseline is None:
        raise ValueError("pinned actions need a baseline")
    S, A = mdp.num_states, mdp.max_actions
    support = mdp.support
    base = None if baseline is None else np.nan_to_num(baseline)
    q = np.zeros((S, A))
    v = np.zeros(S)
    P = mdp.transitions
    gamma = mdp.discount

    if gamma >= 1.0:
        for level in _topological_levels(mdp):
            rows = (level[:, None] * A + np.arange(A)).ravel()
            q[level] = mdp.reward[level] + (P[rows] @ v).reshape(-1, A)
            sub_pin = None if pinned is None else pinned[level]
            sub_base = None if base is None else base[level]
            v[level] = _backup_values(q[level], support[level], sub_pin, sub_base)
        residual = 0.0
    else:
        residual = np.inf
        for _ in range(max_sweeps):
            q_new = mdp.reward + gamma * (P @ v).reshape(S, A)
            residual = float(np.max(np.abs(q_new - q)[support], initial=0.0))
            q = q_new
            v = _backup_values(q, support, pinned, base)
            if residual <= tol:
                break
    return QTable(mdp.player, np.where(support, q, np.nan), v, residual)


def bellman_residual(mdp: TabularMdp, qt: QTable) -> float:
    S, A = mdp.num_states, mdp.max_actions
    target = mdp.reward + mdp.discount * (mdp.transitions @ qt.values).reshape(S, A)
    return float(np.max(np.abs(target - np.nan_to_num(qt.q))[mdp.support], initial=0.0))


def greedy_policy(qt: QTable, support: np.ndarray, fallback: np.ndarray) -> BehaviorPolicy:
    """One-hot argmax over supported actions; ``fallback`` rows where none are supported."""
    masked = np.where(support, np.nan_to_num(qt.q), -np.inf)
    best = np.argmax(masked, axis=1)
    has = support.any(axis=1)
    probs = np.array(fallback, dtype=float, copy=True)
    probs[has] = 0.0
    probs[np.flatnonzero(has), best[has]] = 1.0
    return BehaviorPolicy(qt.player, probs)


def spi_policy(qt: QTable, support: np.ndarray, pinned: np.ndarray, baseline: np.ndarray) -> BehaviorPolicy:
    eligible = support & ~pinned
    masked = np.where(eligible, np.nan_to_num(qt.q), -np.inf)
    best = np.argmax(masked, axis=1)
    has = eligible.any(axis=1)
    base = np.nan_to_num(baseline)
    probs = np.where(pinned, base, 0.0)
    rows = np.flatnonzero(has)
    probs[rows, best[has]] += 1.0 - probs[rows].sum(axis=1)
    probs[~has] = base[~has]
    return BehaviorPolicy(qt.player, probs)


# --------------------------------------------------------------------------
# Sample-based oracles
# --------------------------------------------------------------------------


def independent_br(
    game: MarkovGame,
    player: int,
    opponents: Sequence[BehaviorPolicy | None],
    budget: int,
    seed,
    tol: float = 1e-9,
) -> BrResult:
    """Model-based best response from ``budget`` private episodes.

    The player explores uniformly while opponents follow their policies.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    uniform = uniform_policy(game, player)
    profile = list(opponents)
    profile[player] = uniform
    data = collect(game, profile, budget, seed)
    model = estimate_model(data, player)
    qt = value_iteration(model.mdp, tol=tol)
    policy = greedy_policy(qt, model.support, uniform.probs)
    return BrResult(policy, model.mdp.start_value(qt.values), budget, "ibr")


def naive_jbr(
    data: JointDataset,
    game: MarkovGame,
    player: int,
    baseline: BehaviorPolicy,
    model: EstimatedModel | None = None,
    tol: float = 1e-9,
) -> BrResult:
    """Offline value iteration on the shared dataset; baseline where no data."""
    model = model or estimate_model(data, player)
    qt = value_iteration(model.mdp, tol=tol)
    policy = greedy_policy(qt, model.support, np.nan_to_num(baseline.probs))
    return BrResult(policy, model.mdp.start_value(qt.values), 0, "naive")


def spi_jbr(
    data: JointDataset,
    game: MarkovGame,
    player: int,
    cfg: SpiConfig,
    model: EstimatedModel | None = None,
    tol: float = 1e-9,
) -> BrResult:
    """Offline value iteration that copies the baseline on under-sampled pairs."""
    model = model or estimate_model(data, player)
    pinned = (model.counts < cfg.n_wedge) & game.legal_mask[player]
    base = np.nan_to_num(cfg.baseline.probs)
    qt = value_iteration(model.mdp, tol=tol, pinned=pinned, baseline=base)
    policy = spi_policy(qt, model.support, pinned, base)
    return BrResult(policy, model.mdp.start_value(qt.values), 0, "spi")
