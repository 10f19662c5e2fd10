"""Finite multi-agent games with perfect-recall information states.

Every game is compiled into an explicit tree of histories.  Histories are the
states of the Markov game, so the process is Markov by construction, and each
acting player sees its information-state key at every decision node.  Chance
events (card deals) are chance nodes with a fixed distribution.

Actions at an information state are addressed by *local* index ``0..k-1`` in
the game's canonical action order; policies are stored as dense
``(num_infostates, max_actions)`` arrays padded with zeros.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.sparse as sp

TERMINAL, CHANCE, DECISION = 0, 1, 2

DEFAULT_NODE_BUDGET = 2_000_000


class GameTooLarge(RuntimeError):
    pass


class MissingInfostate(KeyError):
    """A policy has no distribution for an infostate that play reached."""


# --------------------------------------------------------------------------
# Game identifiers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GameId:
    kind: str
    seed: int = 0
    rows: int = 2
    cols: int = 2

    _MATRIX = re.compile(r"^matrix:(-?\d+):(\d+)x(\d+)$")

    @classmethod
    def parse(cls, text: str) -> "GameId":
        text = text.strip().lower()
        if text in ("kuhn", "leduc"):
            return cls(text)
        m = cls._MATRIX.match(text)
        if m:
            seed, rows, cols = (int(g) for g in m.groups())
            if rows < 1 or cols < 1:
                raise ValueError(f"matrix game needs positive dimensions: {text!r}")
            return cls("matrix", seed, rows, cols)
        raise ValueError(f"unknown game id {text!r}")

    def __str__(self) -> str:
        if self.kind == "matrix":
            return f"matrix:{self.seed}:{self.rows}x{self.cols}"
        return self.kind


# --------------------------------------------------------------------------
# Rules.  Each rules object describes histories; MarkovGame compiles them.
# --------------------------------------------------------------------------


class _KuhnRules:
    """Three cards (J, Q, K), ante 1, one bet of size 1, a single round."""

    name = "kuhn"
    num_players = 2
    cards = "JQK"
    action_names = ("p", "b")
    payoff_bounds = (-2.0, 2.0)

    def root(self):
        return ((), "")

    def key(self, h) -> str:
        deal, acts = h
        return "".join(self.cards[c] for c in deal) + "|" + acts

    def node_type(self, h):
        deal, acts = h
        if len(deal) < 2:
            return CHANCE
        if acts in ("pp", "bp", "bb", "pbp", "pbb"):
            return TERMINAL
        return DECISION

    def chance_outcomes(self, h):
        deal, _ = h
        rest = [c for c in range(3) if c not in deal]
        return [(c, 1.0 / len(rest)) for c in rest]

    def chance_child(self, h, outcome):
        deal, acts = h
        return (deal + (outcome,), acts)

    def actors(self, h):
        return (len(h[1]) % 2,)

    def legal(self, h, player):
        return (0, 1)

    def infokey(self, h, player) -> str:
        deal, acts = h
        return f"P{player}:{self.cards[deal[player]]}:{acts}"

    def child(self, h, joint):
        deal, acts = h
        return (deal, acts + self.action_names[joint[self.actors(h)[0]]])

    def payoff(self, h):
        deal, acts = h
        if acts == "bp":
            return (1.0, -1.0)
        if acts == "pbp":
            return (-1.0, 1.0)
        stake = 1.0 if acts == "pp" else 2.0
        return (stake, -stake) if deal[0] > deal[1] else (-stake, stake)


class _LeducRules:
    """Six cards (J, Q, K in two suits), two betting rounds.

    Ante 1; raise sizes 2 then 4; at most two raises per round.  Player 0
    opens each round.  Fold is legal only when facing an outstanding bet.
    A pair with the public card wins, otherwise the higher rank; equal ranks
    split the pot.
    """

    name = "leduc"
    num_players = 2
    action_names = ("f", "c", "r")
    raise_sizes = (2, 4)
    max_raises = 2
    payoff_bounds = (-13.0, 13.0)

    @staticmethod
    def card_name(c: int) -> str:
        return "JQK"[c // 2] + "sh"[c % 2]

    def root(self):
        return ((), ("",))

    def key(self, h) -> str:
        deal, rounds = h
        return "".join(self.card_name(c) for c in deal) + "|" + "/".join(rounds)

    def _replay(self, rounds):
        """Replay the betting; return (contributions, index of folder or None)."""
        contrib = [1, 1]
        folded = None
        for rnd, seq in enumerate(rounds):
            size = self.raise_sizes[rnd]
            player = 0
            for a in seq:
                if a == "f":
                    folded = player
                elif a == "c":
                    contrib[player] = max(contrib)
                else:
                    contrib[player] = max(contrib) + size
                player = 1 - player
        return contrib, folded

    @staticmethod
    def _round_over(seq: str) -> bool:
        return seq == "cc" or (len(seq) >= 2 and seq[-1] == "c" and "r" in seq)

    def node_type(self, h):
        deal, rounds = h
        if len(deal) < 2:
            return CHANCE
        contrib, folded = self._replay(rounds)
        if folded is not None:
            return TERMINAL
        seq = rounds[-1]
        if self._round_over(seq):
            if len(rounds) == 2:
                return TERMINAL
            return CHANCE
        return DECISION

    def chance_outcomes(self, h):
        deal, _ = h
        rest = [c for c in range(6) if c not in deal]
        return [(c, 1.0 / len(rest)) for c in rest]

    def chance_child(self, h, outcome):
        deal, rounds = h
        if len(deal) < 2:
            return (deal + (outcome,), rounds)
        return (deal + (outcome,), rounds + ("",))

    def actors(self, h):
        return (len(h[1][-1]) % 2,)

    def legal(self, h, player):
        seq = h[1][-1]
        facing = seq.endswith("r")
        acts = [0] if facing else []
        acts.append(1)
        if seq.count("r") < self.max_raises:
            acts.append(2)
        return tuple(acts)

    def infokey(self, h, player) -> str:
        deal, rounds = h
        public = self.card_name(deal[2]) if len(deal) > 2 else ""
        return f"P{player}:{self.card_name(deal[player])}:{public}:{'/'.join(rounds)}"

    def child(self, h, joint):
        deal, rounds = h
        a = joint[self.actors(h)[0]]
        return (deal, rounds[:-1] + (rounds[-1] + self.action_names[a],))

    def payoff(self, h):
        deal, rounds = h
        contrib, folded = self._replay(rounds)
        if folded is not None:
            loss = float(contrib[folded])
            return (-loss, loss) if folded == 0 else (loss, -loss)
        ranks = [deal[0] // 2, deal[1] // 2]
        pub = deal[2] // 2
        stake = float(contrib[0])
        if ranks[0] == pub:
            return (stake, -stake)
        if ranks[1] == pub:
            return (-stake, stake)
        if ranks[0] == ranks[1]:
            return (0.0, 0.0)
        return (stake, -stake) if ranks[0] > ranks[1] else (-stake, stake)


class _MatrixRules:
    """One-shot zero-sum game; both players move simultaneously."""

    num_players = 2

    def __init__(self, seed: int, rows: int, cols: int, matrix=None):
        if matrix is None:
            matrix = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(rows, cols))
        self.matrix = np.asarray(matrix, dtype=float)
        self.name = f"matrix:{seed}:{rows}x{cols}"
        self.action_names = tuple(str(a) for a in range(max(self.matrix.shape)))
        c = float(np.max(np.abs(self.matrix))) if self.matrix.size else 0.0
        self.payoff_bounds = (-c, c)

    def root(self):
        return ()

    def key(self, h) -> str:
        return ",".join(str(a) for a in h) + "|"

    def node_type(self, h):
        return TERMINAL if h else DECISION

    def actors(self, h):
        return (0, 1)

    def legal(self, h, player):
        return tuple(range(self.matrix.shape[player]))

    def infokey(self, h, player) -> str:
        return f"P{player}:"

    def child(self, h, joint):
        return tuple(joint)

    def payoff(self, h):
        v = float(self.matrix[h[0], h[1]])
        return (v, -v)


# --------------------------------------------------------------------------
# Compiled game
# --------------------------------------------------------------------------


class MarkovGame:
    """A finite game compiled into flat node arrays.

    Public surface mirrors a Markov game: ``states``, ``legal_actions``,
    ``transition``, ``rewards``, ``initial_dist``, ``infostate``,
    ``is_terminal``, ``discount`` and ``payoff_bounds``.  Rewards are paid on
    the transition into a terminal history; ``discount`` is 1 (episodic).
    """

    def __init__(self, rules, game_id: GameId, node_budget: int = DEFAULT_NODE_BUDGET):
        self.rules = rules
        self.id = game_id
        self.num_players = rules.num_players
        self.discount = 1.0
        self.payoff_bounds = tuple(float(b) for b in rules.payoff_bounds)
        self.node_budget = node_budget
        self._compile()
        self._check_well_formed()

    # -- construction -------------------------------------------------------

    def _compile(self) -> None:
        n = self.num_players
        rules = self.rules
        keys: list[str] = []
        kind: list[int] = []
        parent: list[int] = []
        depth: list[int] = []
        payoff: list[tuple] = []
        node_iset: list[list[int]] = []
        node_seq: list[list[int]] = []
        child_start: list[int] = []
        num_children: list[int] = []
        child_prob: dict[int, float] = {}
        strides: list[list[int]] = []

        iset_index: list[dict[str, int]] = [dict() for _ in range(n)]
        iset_keys: list[list[str]] = [[] for _ in range(n)]
        iset_legal: list[list[tuple]] = [[] for _ in range(n)]
        iset_parent: list[list[int]] = [[] for _ in range(n)]
        self.max_actions = max(len(rules.action_names), 1)
        A = self.max_actions

        # Breadth-first so children of a node are contiguous.
        histories = [rules.root()]
        seqs = [tuple([0] * n)]
        parent.append(-1)
        depth.append(0)
        head = 0
        while head < len(histories):
            if len(histories) > self.node_budget:
                raise GameTooLarge(f"{rules.name}: more than {self.node_budget} nodes")
            h = histories[head]
            my_seq = seqs[head]
            t = rules.node_type(h)
            keys.append(rules.key(h))
            kind.append(t)
            isets = [-1] * n
            stride = [0] * n
            children: list[tuple] = []
            child_seqs: list[tuple] = []
            if t == TERMINAL:
                payoff.append(tuple(float(v) for v in rules.payoff(h)))
            elif t == CHANCE:
                payoff.append((0.0,) * n)
                for outcome, prob in rules.chance_outcomes(h):
                    child_prob[len(histories) + len(children)] = prob
                    children.append(rules.chance_child(h, outcome))
                    child_seqs.append(my_seq)
            else:
                payoff.append((0.0,) * n)
                actors = rules.actors(h)
                legal = {p: rules.legal(h, p) for p in actors}
                for p in actors:
                    k = rules.infokey(h, p)
                    idx = iset_index[p].get(k)
                    if idx is None:
                        idx = len(iset_keys[p])
                        iset_index[p][k] = idx
                        iset_keys[p].append(k)
                        iset_legal[p].append(legal[p])
                        iset_parent[p].append(my_seq[p])
                    elif iset_legal[p][idx] != legal[p] or iset_parent[p][idx] != my_seq[p]:
                        raise ValueError(f"perfect recall violated at infostate {k!r}")
                    isets[p] = idx
                # Joint index: last actor varies fastest.
                s = 1
                for p in reversed(actors):
                    stride[p] = s
                    s *= len(legal[p])
                for j in range(s):
                    local = {p: (j // stride[p]) % len(legal[p]) for p in actors}
                    joint = tuple(legal[p][local[p]] if p in local else None for p in range(n))
                    children.append(rules.child(h, joint))
                    cs = list(my_seq)
                    for p in actors:
                        cs[p] = 1 + isets[p] * A + local[p]
                    child_seqs.append(tuple(cs))
            node_iset.append(isets)
            node_seq.append(list(my_seq))
            strides.append(stride)
            child_start.append(len(histories))
            num_children.append(len(children))
            for c, cs in zip(children, child_seqs):
                histories.append(c)
                seqs.append(cs)
                parent.append(head)
                depth.append(depth[head] + 1)
            head += 1

        N = len(histories)
        self.num_nodes = N
        self.node_keys = keys
        self.node_index = {k: i for i, k in enumerate(keys)}
        if len(self.node_index) != N:
            raise ValueError("history keys are not unique")
        self.kind = np.asarray(kind, dtype=np.int8)
        self.parent = np.asarray(parent, dtype=np.int64)
        self.depth = np.asarray(depth, dtype=np.int64)
        self.payoff = np.asarray(payoff, dtype=float).reshape(N, n)
        self.node_iset = np.asarray(node_iset, dtype=np.int64).reshape(N, n)
        self.node_seq = np.asarray(node_seq, dtype=np.int64).reshape(N, n)
        self.stride = np.asarray(strides, dtype=np.int64).reshape(N, n)
        self.child_start = np.asarray(child_start, dtype=np.int64)
        self.num_children = np.asarray(num_children, dtype=np.int64)
        self.child_prob = np.zeros(N)
        for c, p in child_prob.items():
            self.child_prob[c] = p

        self.infostate_keys = iset_keys
        self.infostate_index = iset_index
        self.infostate_legal = iset_legal
        self.num_infostates = [len(k) for k in iset_keys]
        self.num_actions = [np.asarray([len(l) for l in legal], dtype=np.int64) for legal in iset_legal]
        self.legal_mask = []
        for p in range(n):
            m = np.zeros((self.num_infostates[p], A), dtype=bool)
            for i, k in enumerate(self.num_actions[p]):
                m[i, :k] = True
            self.legal_mask.append(m)
        self.infostate_parent_seq = [np.asarray(v, dtype=np.int64) for v in iset_parent]
        self.infostate_depth = []
        for p in range(n):
            d = np.zeros(self.num_infostates[p], dtype=np.int64)
            par = self.infostate_parent_seq[p]
            for i in range(self.num_infostates[p]):
                if par[i] > 0:
                    d[i] = d[(par[i] - 1) // A] + 1
            self.infostate_depth.append(d)

        # Chance reach of every node, and the terminal table.
        reach = np.ones(N)
        for v in range(1, N):
            p = self.parent[v]
            reach[v] = reach[p] * (self.child_prob[v] if self.kind[p] == CHANCE else 1.0)
        self.chance_reach = reach
        self.terminals = np.flatnonzero(self.kind == TERMINAL)
        self.terminal_chance = reach[self.terminals]
        self.terminal_seq = self.node_seq[self.terminals]
        self.terminal_payoff = self.payoff[self.terminals]

        cmax = int(self.num_children[self.kind == CHANCE].max()) if (self.kind == CHANCE).any() else 1
        cum = np.ones((N, cmax))
        for v in np.flatnonzero(self.kind == CHANCE):
            s, k = self.child_start[v], self.num_children[v]
            cum[v, :k] = np.cumsum(self.child_prob[s : s + k])
            cum[v, k - 1 :] = 1.0
        self.chance_cum = cum

    def _check_well_formed(self) -> None:
        for v in np.flatnonzero(self.kind == CHANCE):
            s, k = self.child_start[v], self.num_children[v]
            total = self.child_prob[s : s + k].sum()
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"chance distribution at {self.node_keys[v]!r} sums to {total}")
        lo, hi = self.payoff_bounds
        if self.terminals.size and (self.terminal_payoff.min() < lo - 1e-12 or self.terminal_payoff.max() > hi + 1e-12):
            raise ValueError("terminal payoff outside payoff_bounds")

    # -- Markov-game view ---------------------------------------------------

    @property
    def payoff_range(self) -> float:
        lo, hi = self.payoff_bounds
        return hi - lo

    @property
    def states(self) -> list[str]:
        return self.node_keys

    @property
    def initial_dist(self) -> dict[str, float]:
        return {self.node_keys[0]: 1.0}

    @cached_property
    def is_zero_sum(self) -> bool:
        return bool(np.all(np.abs(self.terminal_payoff.sum(axis=1)) == 0.0))

    def _node(self, state) -> int:
        return state if isinstance(state, (int, np.integer)) else self.node_index[state]

    def is_terminal(self, state) -> bool:
        return self.kind[self._node(state)] == TERMINAL

    def is_chance(self, state) -> bool:
        return self.kind[self._node(state)] == CHANCE

    def actors(self, state) -> tuple[int, ...]:
        v = self._node(state)
        return tuple(int(p) for p in np.flatnonzero(self.node_iset[v] >= 0))

    def infostate(self, player: int, state) -> str | None:
        i = self.node_iset[self._node(state), player]
        return None if i < 0 else self.infostate_keys[player][i]

    def legal_actions(self, state, player: int) -> tuple[str, ...]:
        i = self.node_iset[self._node(state), player]
        if i < 0:
            return ()
        return tuple(self.rules.action_names[a] for a in self.infostate_legal[player][i])

    def child(self, state, joint: Sequence[int | None]) -> int:
        """Child node for a joint action given as local indices (None = not acting)."""
        v = self._node(state)
        j = sum(int(a) * int(self.stride[v, p]) for p, a in enumerate(joint) if a is not None)
        return int(self.child_start[v] + j)

    def transition(self, state, joint: Sequence[int | None] = ()) -> dict[str, float]:
        v = self._node(state)
        if self.kind[v] == TERMINAL:
            return {self.node_keys[v]: 1.0}
        if self.kind[v] == CHANCE:
            s, k = self.child_start[v], self.num_children[v]
            return {self.node_keys[c]: float(self.child_prob[c]) for c in range(s, s + k)}
        return {self.node_keys[self.child(v, joint)]: 1.0}

    def rewards(self, state, joint: Sequence[int | None] = ()) -> np.ndarray:
        """Expected per-player reward of taking ``joint`` at ``state``."""
        v = self._node(state)
        if self.kind[v] == TERMINAL:
            return np.zeros(self.num_players)
        out = np.zeros(self.num_players)
        for key, p in self.transition(v, joint).items():
            out += p * self.payoff[self.node_index[key]]
        return out

    # -- sequence form ------------------------------------------------------

    def num_sequences(self, player: int) -> int:
        return 1 + self.num_infostates[player] * self.max_actions

    @cached_property
    def infostate_levels(self) -> list[list[np.ndarray]]:
        """Per player, infostate indices grouped by own-sequence depth (shallow first)."""
        out = []
        for p in range(self.num_players):
            d = self.infostate_depth[p]
            out.append([np.flatnonzero(d == k) for k in range(int(d.max()) + 1 if d.size else 0)])
        return out

    @cached_property
    def payoff_matrices(self) -> list[sp.csr_matrix]:
        """Chance-weighted sequence-form payoff matrices (two-player games)."""
        if self.num_players != 2:
            raise NotImplementedError("sequence-form matrices need two players")
        rows, cols = self.terminal_seq[:, 0], self.terminal_seq[:, 1]
        shape = (self.num_sequences(0), self.num_sequences(1))
        return [
            sp.csr_matrix((self.terminal_chance * self.terminal_payoff[:, p], (rows, cols)), shape=shape)
            for p in range(2)
        ]

    def __repr__(self) -> str:
        return f"MarkovGame({self.id}, nodes={self.num_nodes}, infostates={self.num_infostates})"


def build_game(game_id: GameId | str, node_budget: int = DEFAULT_NODE_BUDGET, matrix=None) -> MarkovGame:
    """Build ``kuhn``, ``leduc`` or ``matrix:<seed>:<m>x<n>``.

    ``matrix`` overrides the random payoff table of a matrix game.
    """
    if isinstance(game_id, str):
        game_id = GameId.parse(game_id)
    if game_id.kind == "kuhn":
        rules = _KuhnRules()
    elif game_id.kind == "leduc":
        rules = _LeducRules()
    elif game_id.kind == "matrix":
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            game_id = GameId("matrix", game_id.seed, *matrix.shape)
        rules = _MatrixRules(game_id.seed, game_id.rows, game_id.cols, matrix)
    else:
        raise ValueError(f"unknown game {game_id}")
    return MarkovGame(rules, game_id, node_budget=node_budget)


def matrix_game(matrix, seed: int = 0) -> MarkovGame:
    m = np.asarray(matrix, dtype=float)
    return build_game(GameId("matrix", seed, *m.shape), matrix=m)


# --------------------------------------------------------------------------
# Policies
# --------------------------------------------------------------------------


@dataclass
class BehaviorPolicy:
    """Per-infostate action distribution for one player.

    ``probs[i, a]`` is the probability of local action ``a`` at infostate
    ``i``.  A row of NaN marks an infostate the policy does not cover.
    """

    player: int
    probs: np.ndarray

    def table(self, game: MarkovGame) -> dict[str, np.ndarray]:
        out = {}
        for i, key in enumerate(game.infostate_keys[self.player]):
            row = self.probs[i, : game.num_actions[self.player][i]]
            if not np.isnan(row).any():
                out[key] = row.copy()
        return out

    @classmethod
    def from_table(cls, game: MarkovGame, player: int, table: dict[str, Sequence[float]]) -> "BehaviorPolicy":
        probs = np.full((game.num_infostates[player], game.max_actions), np.nan)
        for key, row in table.items():
            i = game.infostate_index[player][key]
            k = game.num_actions[player][i]
            row = np.asarray(row, dtype=float)
            if row.shape != (k,):
                raise ValueError(f"{key!r}: expected {k} probabilities, got {row.shape}")
            probs[i] = 0.0
            probs[i, :k] = row
        return cls(player, probs)

    def validate(self, game: MarkovGame, atol: float = 1e-9) -> None:
        legal = game.legal_mask[self.player]
        if self.probs.shape != legal.shape:
            raise ValueError(f"policy shape {self.probs.shape} != {legal.shape}")
        covered = ~np.isnan(self.probs).any(axis=1)
        p = self.probs[covered]
        if (p < -atol).any():
            raise ValueError("negative probability")
        if (np.abs(p[~legal[covered]]) > atol).any():
            raise ValueError("probability on an illegal action")
        if (np.abs(p.sum(axis=1) - 1.0) > atol).any():
            raise ValueError("rows do not sum to one")

    def fingerprint(self) -> bytes:
        return np.ascontiguousarray(self.probs, dtype="<f8").tobytes()


def uniform_policy(game: MarkovGame, player: int) -> BehaviorPolicy:
    legal = game.legal_mask[player]
    probs = legal / game.num_actions[player][:, None]
    return BehaviorPolicy(player, probs.astype(float))


def random_policy(game: MarkovGame, player: int, rng: np.random.Generator, alpha: float = 1.0) -> BehaviorPolicy:
    """Dirichlet(alpha) distribution at every infostate."""
    legal = game.legal_mask[player]
    g = rng.gamma(alpha, size=legal.shape) * legal
    return BehaviorPolicy(player, g / g.sum(axis=1, keepdims=True))


def pure_policy(game: MarkovGame, player: int, choice: Sequence[int]) -> BehaviorPolicy:
    probs = np.zeros((game.num_infostates[player], game.max_actions))
    probs[np.arange(len(choice)), np.asarray(choice, dtype=int)] = 1.0
    return BehaviorPolicy(player, probs)


def realization_plan(game: MarkovGame, policy: BehaviorPolicy) -> np.ndarray:
    """Sequence-form realization plan; ``x[0] = 1`` is the empty sequence.

    Raises MissingInfostate if an uncovered infostate has positive own-reach.
    """
    p = policy.player
    A = game.max_actions
    x = np.zeros(game.num_sequences(p))
    x[0] = 1.0
    offsets = np.arange(A)
    for level in game.infostate_levels[p]:
        parent_reach = x[game.infostate_parent_seq[p][level]]
        rows = policy.probs[level]
        bad = np.isnan(rows).any(axis=1) & (parent_reach > 0)
        if bad.any():
            key = game.infostate_keys[p][level[np.argmax(bad)]]
            raise MissingInfostate(key)
        rows = np.nan_to_num(rows)
        x[1 + level[:, None] * A + offsets] = parent_reach[:, None] * rows
    return x


def expected_payoff(game: MarkovGame, profile: Sequence[BehaviorPolicy], node_budget: int | None = None) -> np.ndarray:
    """Exact expected payoff vector of a behavior profile."""
    budget = game.node_budget if node_budget is None else node_budget
    if game.num_nodes > budget:
        raise GameTooLarge(f"{game.id}: {game.num_nodes} nodes exceeds budget {budget}")
    weight = game.terminal_chance.copy()
    for p, policy in enumerate(profile):
        x = realization_plan(game, policy)
        weight *= x[game.terminal_seq[:, p]]
    return weight @ game.terminal_payoff


# --------------------------------------------------------------------------
# Episodes
# --------------------------------------------------------------------------


@dataclass
class Step:
    state: str
    joint_action: tuple[int | None, ...]
    rewards: tuple[float, ...]
    next_state: str
    infostates: tuple[str | None, ...]


@dataclass
class EpisodeTrace:
    steps: list[Step] = field(default_factory=list)

    @property
    def returns(self) -> np.ndarray:
        if not self.steps:
            return np.zeros(0)
        return np.sum([s.rewards for s in self.steps], axis=0)

    @property
    def final_state(self) -> str | None:
        return self.steps[-1].next_state if self.steps else None


def _choose(rng: np.random.Generator, probs: np.ndarray) -> int:
    u = rng.random()
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, u, side="right"), len(probs) - 1))


def play_episode(game: MarkovGame, profile: Sequence[BehaviorPolicy], rng_seed) -> EpisodeTrace:
    """Sample one episode, stepping history by history."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    trace = EpisodeTrace()
    v = 0
    n = game.num_players
    while game.kind[v] != TERMINAL:
        isets = game.node_iset[v]
        infos = tuple(game.infostate_keys[p][isets[p]] if isets[p] >= 0 else None for p in range(n))
        if game.kind[v] == CHANCE:
            s, k = game.child_start[v], game.num_children[v]
            nxt = s + _choose(rng, game.child_prob[s : s + k])
            joint: tuple = (None,) * n
        else:
            joint_l = []
            for p in range(n):
                if isets[p] < 0:
                    joint_l.append(None)
                    continue
                k = game.num_actions[p][isets[p]]
                row = profile[p].probs[isets[p], :k]
                if np.isnan(row).any():
                    raise MissingInfostate(infos[p])
                joint_l.append(_choose(rng, row))
            joint = tuple(joint_l)
            nxt = game.child(v, joint)
        r = tuple(float(x) for x in game.payoff[nxt]) if game.kind[nxt] == TERMINAL else (0.0,) * n
        trace.steps.append(Step(game.node_keys[v], joint, r, game.node_keys[nxt], infos))
        v = nxt
    return trace


def sample_paths(game: MarkovGame, profile: Sequence[BehaviorPolicy], episodes: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised episode sampler.

    Returns an ``(episodes, L)`` array of node ids along each episode, padded
    with -1 after the terminal node.
    """
    n = game.num_players
    cums = []
    for p in range(n):
        probs = profile[p].probs if profile[p] is not None else np.full(game.legal_mask[p].shape, np.nan)
        c = np.cumsum(np.where(game.legal_mask[p], probs, 0.0), axis=1)
        cums.append(c)
    cur = np.zeros(episodes, dtype=np.int64)
    cols = [cur.copy()]
    active = np.flatnonzero(game.kind[cur] != TERMINAL)
    while active.size:
        nodes = cur[active]
        kinds = game.kind[nodes]
        nxt = game.child_start[nodes].copy()
        ch = kinds == CHANCE
        if ch.any():
            u = rng.random(int(ch.sum()))
            cn = nodes[ch]
            pick = (u[:, None] >= game.chance_cum[cn]).sum(axis=1)
            nxt[ch] += np.minimum(pick, game.num_children[cn] - 1)
        dec = ~ch
        if dec.any():
            dn = nodes[dec]
            offset = np.zeros(dn.size, dtype=np.int64)
            for p in range(n):
                isets = game.node_iset[dn, p]
                acting = isets >= 0
                if not acting.any():
                    continue
                rows = cums[p][isets[acting]]
                if np.isnan(rows[:, -1]).any():
                    bad = isets[acting][np.isnan(rows[:, -1])][0]
                    raise MissingInfostate(game.infostate_keys[p][bad])
                u = rng.random(int(acting.sum()))
                a = (u[:, None] >= rows).sum(axis=1)
                a = np.minimum(a, game.num_actions[p][isets[acting]] - 1)
                offset[acting] += a * game.stride[dn[acting], p]
            nxt[dec] += offset
        cur = cur.copy()
        cur[active] = nxt
        col = np.full(episodes, -1, dtype=np.int64)
        col[active] = nxt
        cols.append(col)
        active = active[game.kind[nxt] != TERMINAL]
    return np.stack(cols, axis=1)
