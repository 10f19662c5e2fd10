"""Single-agent MDPs induced by fixing the opponents' behavior.

Two views are provided.  :func:`history_kernel` marginalises opponents and
chance out of the one-step dynamics at every history (the raw induced kernel,
linear in the opponents' action distribution at each history).  :func:`induce`
aggregates that kernel over player *i*'s information states, weighting each
history by its chance-and-opponent reach; with perfect recall this
decision-point MDP is exact, and its optimal value is the best-response value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .games import CHANCE, TERMINAL, BehaviorPolicy, MarkovGame, MissingInfostate, realization_plan


@dataclass
class TabularMdp:
    """Finite MDP over a player's information states.

    ``transitions`` has one row per flattened ``(state, action)`` pair
    (``s * max_actions + a``) and one column per state.  Probability mass not
    in the row is termination, recorded in ``terminal_prob`` so that every
    supported row plus its termination sums to one.  ``reward`` is the
    expected reward collected before the next decision.  ``initial`` and
    ``initial_reward`` give the start distribution and the (already weighted)
    return of episodes in which the player never acts.
    """

    player: int
    state_keys: list[str]
    num_actions: np.ndarray
    transitions: sp.csr_matrix
    terminal_prob: np.ndarray
    reward: np.ndarray
    support: np.ndarray
    initial: np.ndarray
    initial_reward: float = 0.0
    discount: float = 1.0

    @property
    def num_states(self) -> int:
        return len(self.state_keys)

    @property
    def max_actions(self) -> int:
        return self.reward.shape[1]

    def start_value(self, values: np.ndarray) -> float:
        return float(self.initial @ values + self.initial_reward)

    def check(self, atol: float = 1e-9) -> None:
        rows = np.asarray(self.transitions.sum(axis=1)).ravel().reshape(self.reward.shape)
        total = rows + self.terminal_prob
        if (np.abs(total[self.support] - 1.0) > atol).any():
            raise ValueError("dynamics rows do not sum to one")


InducedMdp = TabularMdp


@dataclass
class MixedStrategy:
    player: int
    atoms: list[tuple[BehaviorPolicy, float]] = field(default_factory=list)

    def __post_init__(self):
        w = np.array([wt for _, wt in self.atoms], dtype=float)
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"mixture weights must lie on the simplex, got {w}")


def to_behavior(mix: MixedStrategy, game: MarkovGame) -> BehaviorPolicy:
    """Realization-equivalent behavior policy of a mixture of policies.

    At each infostate the atoms are weighted by mixture weight times the
    atom's own probability of reaching it.  Infostates no atom reaches get the
    uniform distribution.
    """
    x = np.zeros(game.num_sequences(mix.player))
    for policy, w in mix.atoms:
        if w > 0:
            x += w * realization_plan(game, policy)
    return behavior_from_plan(game, mix.player, x)


def behavior_from_plan(game: MarkovGame, player: int, x: np.ndarray) -> BehaviorPolicy:
    """Behavior policy whose realization plan is ``x`` (uniform where ``x`` is zero)."""
    p = player
    block = x[1:].reshape(game.num_infostates[p], game.max_actions)
    parent = x[game.infostate_parent_seq[p]]
    legal = game.legal_mask[p]
    uniform = legal / game.num_actions[p][:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(parent[:, None] > 0, block / parent[:, None], uniform)
    # Renormalise against rounding in long products.
    probs = np.where(legal, np.maximum(probs, 0.0), 0.0)
    probs /= probs.sum(axis=1, keepdims=True)
    return BehaviorPolicy(p, probs)


def _joint_weights(game: MarkovGame, v: int, player: int, opponents: Sequence[BehaviorPolicy | None]):
    """For each joint child of decision node v: (child, own local action or None, opponent weight)."""
    n = game.num_players
    isets = game.node_iset[v]
    start, count = int(game.child_start[v]), int(game.num_children[v])
    out = []
    for j in range(count):
        w = 1.0
        own = None
        for p in range(n):
            if isets[p] < 0:
                continue
            k = int(game.num_actions[p][isets[p]])
            a = (j // int(game.stride[v, p])) % k
            if p == player:
                own = a
                continue
            prob = opponents[p].probs[isets[p], a]
            if np.isnan(prob):
                raise MissingInfostate(game.infostate_keys[p][isets[p]])
            w *= prob
        out.append((start + j, own, w))
    return out


def history_kernel(game: MarkovGame, player: int, opponents: Sequence[BehaviorPolicy | None]):
    """One-step induced kernel at every nonterminal history.

    Returns ``(P, r)``: ``P`` is a sparse ``(N * max_actions, N)`` matrix with
    ``P[v * A + a, v']`` the probability of moving from history ``v`` to
    ``v'`` when the player takes local action ``a`` (action 0 where the player
    does not act), and ``r`` the matching ``(N, A)`` expected reward.
    """
    A = game.max_actions
    N = game.num_nodes
    rows, cols, vals = [], [], []
    reward = np.zeros((N, A))
    for v in range(N):
        if game.kind[v] == TERMINAL:
            continue
        if game.kind[v] == CHANCE:
            s, k = int(game.child_start[v]), int(game.num_children[v])
            targets = [(c, 0, game.child_prob[c]) for c in range(s, s + k)]
        else:
            targets = [(c, 0 if own is None else own, w) for c, own, w in _joint_weights(game, v, player, opponents)]
        for c, a, w in targets:
            if w == 0.0:
                continue
            rows.append(v * A + a)
            cols.append(c)
            vals.append(w)
            if game.kind[c] == TERMINAL:
                reward[v, a] += w * game.payoff[c, player]
    P = sp.csr_matrix((vals, (rows, cols)), shape=(N * A, N))
    return P, reward


def induce(game: MarkovGame, player: int, opponents: Sequence[BehaviorPolicy | None]) -> TabularMdp:
    """Player ``player``'s decision-point MDP against fixed opponents.

    ``opponents`` is a full profile; the entry at ``player`` is ignored.
    States are the player's infostates; infostates the opponents never let
    the game reach carry no support.
    """
    i = player
    A = game.max_actions
    S = game.num_infostates[i]
    mass = np.zeros(S)
    flow: dict[tuple[int, int], float] = {}
    reward = np.zeros(S * A)
    term = np.zeros(S * A)
    initial = np.zeros(S)
    initial_reward = 0.0

    # Depth-first walk carrying chance-and-opponent reach and the player's
    # last (infostate, action) pair.
    stack = [(0, 1.0, -1)]
    while stack:
        v, w, sa = stack.pop()
        if w == 0.0:
            continue
        kind = game.kind[v]
        if kind == TERMINAL:
            u = w * game.payoff[v, i]
            if sa < 0:
                initial_reward += u
            else:
                reward[sa] += u
                term[sa] += w
            continue
        if kind == CHANCE:
            s, k = int(game.child_start[v]), int(game.num_children[v])
            for c in range(s, s + k):
                stack.append((c, w * game.child_prob[c], sa))
            continue
        J = int(game.node_iset[v, i])
        if J >= 0:
            mass[J] += w
            if sa < 0:
                initial[J] += w
            else:
                flow[(sa, J)] = flow.get((sa, J), 0.0) + w
        for c, own, wj in _joint_weights(game, v, i, opponents):
            nsa = sa if own is None else J * A + own
            stack.append((c, w * wj, nsa))

    src_state = np.repeat(np.arange(S), A)
    denom = mass[src_state]
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(denom > 0, 1.0 / denom, 0.0)
    if flow:
        keys = np.array(list(flow.keys()), dtype=np.int64)
        vals = np.array(list(flow.values())) * scale[keys[:, 0]]
        P = sp.csr_matrix((vals, (keys[:, 0], keys[:, 1])), shape=(S * A, S))
    else:
        P = sp.csr_matrix((S * A, S))
    support = (mass[:, None] > 0) & game.legal_mask[i]
    return TabularMdp(
        player=i,
        state_keys=list(game.infostate_keys[i]),
        num_actions=game.num_actions[i].copy(),
        transitions=P,
        terminal_prob=(term * scale).reshape(S, A),
        reward=(reward * scale).reshape(S, A),
        support=support,
        initial=initial,
        initial_reward=initial_reward,
        discount=game.discount,
    )
