"""Joint-experience datasets and the per-player models estimated from them.

Episodes are stored as node-id paths through the compiled game tree; joint
transitions, per-player visit counts and decision-point models are derived
from the paths.  The binary layout written by :func:`write_binary` is::

    header   magic "JBRD" | u16 version | u16 len + utf8 game id
             | 32-byte sha256 of the collection profile | f64 delta
             | u8 kind (0 none, 1 random, 2 targeted) | u8 num_players
             | u32 episodes | u64 num_transitions
    records  u32 payload length, then payload:
             u32 episode | u16 len + utf8 state | num_players x i16 action
             (-1 = not acting) | num_players x f64 reward
             | u16 len + utf8 next state

All integers and floats are little-endian.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .games import BehaviorPolicy, MarkovGame, sample_paths
from .induced import TabularMdp

KINDS = ("none", "random", "targeted")
MAGIC = b"JBRD"
VERSION = 1


@dataclass
class ExplorationSpec:
    delta: float = 0.0
    kind: str = "none"
    targeted_policies: Sequence[BehaviorPolicy] | None = None

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown exploration kind {self.kind!r}")
        if self.kind == "targeted" and self.targeted_policies is None:
            raise ValueError("targeted exploration needs targeted_policies")


def perturb(profile: Sequence[BehaviorPolicy], spec: ExplorationSpec, game: MarkovGame) -> list[BehaviorPolicy]:
    """Mix every player's behavior toward an exploration policy with weight delta."""
    if spec.kind == "none" or spec.delta == 0.0:
        return list(profile)
    out = []
    for p, policy in enumerate(profile):
        if spec.kind == "random":
            nu = game.legal_mask[p] / game.num_actions[p][:, None]
        else:
            nu = spec.targeted_policies[p].probs
        out.append(BehaviorPolicy(p, (1.0 - spec.delta) * policy.probs + spec.delta * nu))
    return out


def l1_perturbation_bound(spec: ExplorationSpec) -> float:
    return 2.0 * spec.delta


def profile_hash(profile: Sequence[BehaviorPolicy]) -> bytes:
    h = hashlib.sha256()
    for policy in profile:
        h.update(policy.fingerprint())
    return h.digest()


class Transition(NamedTuple):
    episode: int
    state: str
    actions: tuple[int, ...]
    rewards: tuple[float, ...]
    next_state: str


class DecisionSteps(NamedTuple):
    """One row per decision of a player, in episode order."""

    episode: np.ndarray
    infostate: np.ndarray
    action: np.ndarray
    next_infostate: np.ndarray  # -1 when the episode ends before the next decision
    reward: np.ndarray


@dataclass
class JointDataset:
    game: MarkovGame
    paths: np.ndarray
    profile_digest: bytes = b"\0" * 32
    delta: float = 0.0
    kind: str = "none"
    counts: list[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=np.int64)
        if self.paths.ndim != 2:
            raise ValueError("paths must be a 2-d array of node ids")
        self._steps: dict[int, DecisionSteps] = {}
        A = self.game.max_actions
        self.counts = []
        for p in range(self.game.num_players):
            st = self.decision_steps(p)
            c = np.bincount(st.infostate * A + st.action, minlength=self.game.num_infostates[p] * A)
            self.counts.append(c.reshape(self.game.num_infostates[p], A))

    @classmethod
    def empty(cls, game: MarkovGame) -> "JointDataset":
        return cls(game, np.zeros((0, 1), dtype=np.int64))

    @property
    def episodes(self) -> int:
        return self.paths.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return (self.paths >= 0).sum(axis=1)

    @property
    def final_nodes(self) -> np.ndarray:
        if not self.episodes:
            return np.zeros(0, dtype=np.int64)
        return self.paths[np.arange(self.episodes), self.lengths - 1]

    def returns(self) -> np.ndarray:
        return self.game.payoff[self.final_nodes]

    def decision_steps(self, player: int) -> DecisionSteps:
        if player in self._steps:
            return self._steps[player]
        g = self.game
        if self.paths.shape[1] < 2 or not self.episodes:
            z = np.zeros(0, dtype=np.int64)
            st = DecisionSteps(z, z, z, z, np.zeros(0))
            self._steps[player] = st
            return st
        src = self.paths[:, :-1]
        dst = self.paths[:, 1:]
        valid = dst >= 0
        iset = np.where(valid, g.node_iset[np.maximum(src, 0), player], -1)
        e, t = np.nonzero(iset >= 0)
        nodes = src[e, t]
        I = iset[e, t]
        joint = dst[e, t] - g.child_start[nodes]
        a = (joint // g.stride[nodes, player]) % g.num_actions[player][I]
        same = np.zeros(e.size, dtype=bool)
        same[:-1] = e[1:] == e[:-1]
        nxt = np.full(e.size, -1, dtype=np.int64)
        nxt[:-1][same[:-1]] = I[1:][same[:-1]]
        reward = np.where(same, 0.0, g.payoff[self.final_nodes[e], player])
        st = DecisionSteps(e, I, a, nxt, reward)
        self._steps[player] = st
        return st

    def transitions(self) -> list[Transition]:
        g = self.game
        n = g.num_players
        out = []
        for e in range(self.episodes):
            path = self.paths[e]
            path = path[path >= 0]
            for v, c in zip(path[:-1], path[1:]):
                j = c - g.child_start[v]
                acts = tuple(
                    int((j // g.stride[v, p]) % g.num_actions[p][g.node_iset[v, p]]) if g.node_iset[v, p] >= 0 else -1
                    for p in range(n)
                )
                r = tuple(float(x) for x in g.payoff[c]) if g.kind[c] == 0 else (0.0,) * n
                out.append(Transition(e, g.node_keys[v], acts, r, g.node_keys[c]))
        return out


def collect(
    game: MarkovGame,
    profile: Sequence[BehaviorPolicy],
    episodes: int,
    seed,
    exploration: ExplorationSpec | None = None,
) -> JointDataset:
    """Run ``episodes`` episodes of the (optionally perturbed) profile."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    behave = profile if exploration is None else perturb(profile, exploration, game)
    paths = sample_paths(game, behave, episodes, rng)
    exploration = exploration or ExplorationSpec()
    return JointDataset(game, paths, profile_hash(profile), exploration.delta, exploration.kind)


@dataclass
class EstimatedModel:
    """Maximum-likelihood decision-point model of one player.

    ``mdp.support`` marks observed pairs; unobserved pairs have zero reward
    and no transitions but are flagged, never treated as data.
    """

    player: int
    counts: np.ndarray
    mdp: TabularMdp

    @property
    def support(self) -> np.ndarray:
        return self.mdp.support

    @property
    def transition_probs(self) -> sp.csr_matrix:
        return self.mdp.transitions

    @property
    def rewards(self) -> np.ndarray:
        return self.mdp.reward


def estimate_model(data: JointDataset, player: int) -> EstimatedModel:
    g = data.game
    if g.discount != 1.0:
        raise NotImplementedError("decision-point estimation assumes undiscounted episodes")
    A = g.max_actions
    S = g.num_infostates[player]
    st = data.decision_steps(player)
    sa = st.infostate * A + st.action
    counts = np.bincount(sa, minlength=S * A).astype(float)
    reward_sum = np.bincount(sa, weights=st.reward, minlength=S * A)
    ends = st.next_infostate < 0
    term = np.bincount(sa[ends], minlength=S * A).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        inv = np.where(counts > 0, 1.0 / counts, 0.0)
    P = sp.coo_matrix(
        (inv[sa[~ends]], (sa[~ends], st.next_infostate[~ends])), shape=(S * A, S)
    ).tocsr()
    P.sum_duplicates()

    E = data.episodes
    initial = np.zeros(S)
    initial_reward = 0.0
    if E:
        first = np.ones(st.episode.size, dtype=bool)
        first[1:] = st.episode[1:] != st.episode[:-1]
        initial = np.bincount(st.infostate[first], minlength=S) / E
        acted = np.zeros(E, dtype=bool)
        acted[st.episode] = True
        initial_reward = float(g.payoff[data.final_nodes[~acted], player].sum() / E)

    counts = counts.reshape(S, A)
    mdp = TabularMdp(
        player=player,
        state_keys=list(g.infostate_keys[player]),
        num_actions=g.num_actions[player].copy(),
        transitions=P,
        terminal_prob=(term * inv).reshape(S, A),
        reward=(reward_sum * inv).reshape(S, A),
        support=counts > 0,
        initial=initial,
        initial_reward=initial_reward,
        discount=g.discount,
    )
    return EstimatedModel(player, counts.astype(np.int64), mdp)


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def _unpack_str(buf: bytes, off: int) -> tuple[str, int]:
    (k,) = struct.unpack_from("<H", buf, off)
    off += 2
    return buf[off : off + k].decode("utf-8"), off + k


def write_binary(data: JointDataset, path) -> None:
    n = data.game.num_players
    trans = data.transitions()
    rec = struct.Struct(f"<{n}h{n}d")
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<H", VERSION))
        f.write(_pack_str(str(data.game.id)))
        f.write(data.profile_digest)
        f.write(struct.pack("<dBBIQ", data.delta, KINDS.index(data.kind), n, data.episodes, len(trans)))
        for t in trans:
            payload = (
                struct.pack("<I", t.episode)
                + _pack_str(t.state)
                + rec.pack(*t.actions, *t.rewards)
                + _pack_str(t.next_state)
            )
            f.write(struct.pack("<I", len(payload)) + payload)


def read_binary(path, game: MarkovGame) -> JointDataset:
    buf = open(path, "rb").read()
    if buf[:4] != MAGIC:
        raise ValueError("not a JBRD dataset")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported dataset version {version}")
    gid, off = _unpack_str(buf, 6)
    if gid != str(game.id):
        raise ValueError(f"dataset is for game {gid!r}, not {game.id}")
    digest = buf[off : off + 32]
    off += 32
    delta, kind, n, episodes, count = struct.unpack_from("<dBBIQ", buf, off)
    off += struct.calcsize("<dBBIQ")
    rec = struct.Struct(f"<{n}h{n}d")
    paths: list[list[int]] = [[] for _ in range(episodes)]
    for _ in range(count):
        (length,) = struct.unpack_from("<I", buf, off)
        off += 4
        body = buf[off : off + length]
        off += length
        (e,) = struct.unpack_from("<I", body, 0)
        state, k = _unpack_str(body, 4)
        k += rec.size
        nxt, _ = _unpack_str(body, k)
        if not paths[e]:
            paths[e].append(game.node_index[state])
        paths[e].append(game.node_index[nxt])
    width = max((len(p) for p in paths), default=1)
    arr = np.full((episodes, width), -1, dtype=np.int64)
    for e, p in enumerate(paths):
        arr[e, : len(p)] = p
    return JointDataset(game, arr, digest, delta, KINDS[kind])


def write_csv(data: JointDataset, path) -> None:
    n = data.game.num_players
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "state"] + [f"a{p}" for p in range(n)] + [f"r{p}" for p in range(n)] + ["next_state"])
        for t in data.transitions():
            w.writerow([t.episode, t.state, *t.actions, *(repr(r) for r in t.rewards), t.next_state])
