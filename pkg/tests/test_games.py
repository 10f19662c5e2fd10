import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jbrpsro.games import (
    GameId,
    GameTooLarge,
    MissingInfostate,
    BehaviorPolicy,
    build_game,
    expected_payoff,
    matrix_game,
    play_episode,
    pure_policy,
    random_policy,
    realization_plan,
    sample_paths,
    uniform_policy,
)

from reference import kuhn_infostates, kuhn_value, leduc_infostates, leduc_value, uniform_table


@pytest.fixture(scope="module")
def kuhn():
    return build_game("kuhn")


@pytest.fixture(scope="module")
def leduc():
    return build_game("leduc")


def as_table(game, policy):
    return {k: list(v) for k, v in policy.table(game).items()}


class TestGameId:
    def test_parse_round_trip(self):
        for text in ("kuhn", "leduc", "matrix:7:3x2"):
            assert str(GameId.parse(text)) == text

    @pytest.mark.parametrize("bad", ["poker", "matrix:1:0x2", "matrix:a:2x2", ""])
    def test_unknown_ids_rejected(self, bad):
        with pytest.raises(ValueError):
            build_game(bad)


class TestStructure:
    def test_kuhn_infostates_match_brute_force_walk(self, kuhn):
        # Six per player (card x {opening, facing a bet}).
        for p in range(2):
            assert sorted(kuhn.infostate_keys[p]) == sorted(kuhn_infostates(p))
        assert kuhn.num_infostates == [6, 6]

    def test_leduc_infostates_match_brute_force_walk(self, leduc):
        for p in range(2):
            ref = leduc_infostates(p)
            assert sorted(leduc.infostate_keys[p]) == [k for k, _ in ref]
            n = {k: int(leduc.num_actions[p][i]) for i, k in enumerate(leduc.infostate_keys[p])}
            assert all(n[k] == m for k, m in ref)

    def test_payoff_bounds(self, kuhn, leduc):
        assert kuhn.payoff_bounds == (-2.0, 2.0) and kuhn.payoff_range == 4.0
        assert leduc.payoff_bounds == (-13.0, 13.0)
        assert np.abs(leduc.terminal_payoff).max() == 13.0
        assert np.abs(kuhn.terminal_payoff).max() == 2.0

    def test_matrix_game_shape(self):
        g = build_game("matrix:0:2x2")
        assert g.num_infostates == [1, 1]
        assert list(g.num_actions[0]) == [2] and list(g.num_actions[1]) == [2]
        M = g.rules.matrix
        assert g.payoff_bounds == (-np.abs(M).max(), np.abs(M).max())

    def test_transitions_are_distributions(self, leduc):
        for v in range(0, leduc.num_nodes, 97):
            if leduc.is_chance(v):
                assert sum(leduc.transition(v).values()) == pytest.approx(1.0, abs=1e-9)

    def test_zero_sum_exact(self, kuhn, leduc):
        for g in (kuhn, leduc):
            assert g.is_zero_sum
            assert np.all(g.payoff.sum(axis=1) == 0.0)

    def test_perfect_recall_legal_sets_agree(self, leduc):
        for p in range(2):
            nodes = np.flatnonzero(leduc.node_iset[:, p] >= 0)
            for v in nodes[::50]:
                i = leduc.node_iset[v, p]
                assert len(leduc.legal_actions(int(v), p)) == leduc.num_actions[p][i]

    def test_node_budget_guard(self, kuhn):
        with pytest.raises(GameTooLarge):
            build_game("leduc", node_budget=1000)
        with pytest.raises(GameTooLarge):
            expected_payoff(kuhn, [uniform_policy(kuhn, 0), uniform_policy(kuhn, 1)], node_budget=10)


class TestExpectedPayoff:
    def test_kuhn_uniform_matches_brute_force(self, kuhn):
        prof = [uniform_policy(kuhn, p) for p in range(2)]
        u = expected_payoff(kuhn, prof)
        assert u[0] == pytest.approx(0.125, abs=1e-12)
        assert u.sum() == pytest.approx(0.0, abs=1e-12)

    def test_leduc_uniform_matches_brute_force(self, leduc):
        prof = [uniform_policy(leduc, p) for p in range(2)]
        u = expected_payoff(leduc, prof)
        ref = leduc_value([uniform_table(leduc_infostates(p)) for p in range(2)])
        assert u[0] == pytest.approx(-5 / 64, abs=1e-12)
        assert u[0] == pytest.approx(ref, abs=1e-12)

    def test_kuhn_random_profiles_match_brute_force(self, kuhn):
        rng = np.random.default_rng(3)
        for _ in range(10):
            prof = [random_policy(kuhn, p, rng) for p in range(2)]
            ref = kuhn_value([as_table(kuhn, pol) for pol in prof])
            assert expected_payoff(kuhn, prof)[0] == pytest.approx(ref, abs=1e-12)

    def test_leduc_random_profile_matches_brute_force(self, leduc):
        rng = np.random.default_rng(4)
        prof = [random_policy(leduc, p, rng) for p in range(2)]
        ref = leduc_value([as_table(leduc, pol) for pol in prof])
        assert expected_payoff(leduc, prof)[0] == pytest.approx(ref, abs=1e-10)

    def test_matrix_pure_lookup(self):
        M = np.array([[0.3, -0.7], [0.1, 0.9]])
        g = matrix_game(M)
        for i in range(2):
            for j in range(2):
                u = expected_payoff(g, [pure_policy(g, 0, [i]), pure_policy(g, 1, [j])])
                assert tuple(u) == (M[i, j], -M[i, j])

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_zero_sum_closure_any_profile(self, seed):
        g = build_game("kuhn")
        rng = np.random.default_rng(seed)
        u = expected_payoff(g, [random_policy(g, p, rng, alpha=0.3) for p in range(2)])
        assert abs(u.sum()) <= 1e-9

    def test_missing_reachable_infostate(self, kuhn):
        probs = uniform_policy(kuhn, 0).probs.copy()
        probs[0] = np.nan
        with pytest.raises(MissingInfostate):
            realization_plan(kuhn, BehaviorPolicy(0, probs))


class TestEpisodes:
    def test_always_check_fold_outcomes(self, kuhn):
        # Player 0 checks; player 1 checks; showdown for one chip.
        prof = [pure_policy(kuhn, p, [0] * 6) for p in range(2)]
        for seed in range(20):
            tr = play_episode(kuhn, prof, seed)
            deal = tr.steps[0].next_state
            assert kuhn.is_terminal(tr.final_state)
            assert tr.final_state.endswith("|pp")
            cards = tr.final_state.split("|")[0]
            expected = 1.0 if "JQK".index(cards[0]) > "JQK".index(cards[1]) else -1.0
            assert tuple(tr.returns) == (expected, -expected)
            assert deal

    def test_deterministic_given_seed(self, leduc):
        prof = [uniform_policy(leduc, p) for p in range(2)]
        a = play_episode(leduc, prof, 11)
        b = play_episode(leduc, prof, 11)
        assert a == b

    def test_matrix_one_joint_action(self):
        g = build_game("matrix:1:3x2")
        tr = play_episode(g, [uniform_policy(g, 0), uniform_policy(g, 1)], 0)
        assert len(tr.steps) == 1
        assert all(a is not None for a in tr.steps[0].joint_action)
        assert g.is_terminal(tr.final_state)

    def test_trace_consistent_with_transitions(self, leduc):
        prof = [uniform_policy(leduc, p) for p in range(2)]
        tr = play_episode(leduc, prof, 5)
        for s in tr.steps:
            if leduc.is_chance(s.state):
                assert s.next_state in leduc.transition(s.state)
            else:
                assert leduc.transition(s.state, s.joint_action) == {s.next_state: 1.0}

    def test_monte_carlo_consistency(self, kuhn):
        rng = np.random.default_rng(9)
        prof = [random_policy(kuhn, p, rng) for p in range(2)]
        returns = np.array([play_episode(kuhn, prof, rng).returns[0] for _ in range(50_000)])
        exact = expected_payoff(kuhn, prof)[0]
        se = returns.std() / np.sqrt(returns.size)
        assert abs(returns.mean() - exact) <= 3 * se

    def test_vectorised_sampler_agrees(self, leduc):
        rng = np.random.default_rng(2)
        prof = [random_policy(leduc, p, rng) for p in range(2)]
        paths = sample_paths(leduc, prof, 40_000, np.random.default_rng(0))
        final = paths[np.arange(len(paths)), (paths >= 0).sum(axis=1) - 1]
        r = leduc.payoff[final, 0]
        exact = expected_payoff(leduc, prof)[0]
        assert abs(r.mean() - exact) <= 3 * r.std() / np.sqrt(r.size)
