from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from jbrpsro.dataset import JointDataset, collect, estimate_model
from jbrpsro.games import BehaviorPolicy, build_game, matrix_game, pure_policy, random_policy, uniform_policy
from jbrpsro.induced import TabularMdp, induce
from jbrpsro.oracles import (
    SpiConfig,
    bellman_residual,
    exact_best_response,
    independent_br,
    naive_jbr,
    policy_value,
    spi_jbr,
    value_iteration,
)

from reference import kuhn_best_response_value, kuhn_nash


@pytest.fixture(scope="module")
def kuhn():
    return build_game("kuhn")


def table(game, pol):
    return {k: list(v) for k, v in pol.table(game).items()}


def from_table(game, player, tab):
    probs = np.zeros((game.num_infostates[player], game.max_actions))
    for k, row in tab.items():
        probs[game.infostate_index[player][k], : len(row)] = [float(x) for x in row]
    return probs


def chain_mdp(rewards, nxt, terminal, support=None):
    S, A = rewards.shape
    rows, cols = [], []
    for (s, a), t in nxt.items():
        rows.append(s * A + a)
        cols.append(t)
    P = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(S * A, S))
    init = np.zeros(S)
    init[0] = 1.0
    return TabularMdp(
        player=0,
        state_keys=[f"s{i}" for i in range(S)],
        num_actions=np.full(S, A),
        transitions=P,
        terminal_prob=terminal,
        reward=rewards,
        support=np.ones((S, A), bool) if support is None else support,
        initial=init,
    )


class TestExactBestResponse:
    def test_against_pure_strategy_enumeration(self, kuhn):
        rng = np.random.default_rng(0)
        for _ in range(10):
            prof = [random_policy(kuhn, p, rng) for p in range(2)]
            tabs = [table(kuhn, pol) for pol in prof]
            for i in range(2):
                br = exact_best_response(kuhn, i, prof)
                assert br.value == pytest.approx(kuhn_best_response_value(tabs, i), abs=1e-12)
                assert policy_value(kuhn, i, br.policy, prof) == pytest.approx(br.value, abs=1e-12)

    def test_nash_profile_has_no_gain(self, kuhn):
        nash = kuhn_nash(Fraction(1, 6))
        prof = [BehaviorPolicy(p, from_table(kuhn, p, nash[p])) for p in range(2)]
        assert exact_best_response(kuhn, 0, prof).value == pytest.approx(-1 / 18, abs=1e-12)
        assert exact_best_response(kuhn, 1, prof).value == pytest.approx(1 / 18, abs=1e-12)

    def test_matrix_pure_column(self):
        M = np.array([[0.1, 0.9], [0.7, 0.2], [0.3, 0.4]])
        g = matrix_game(M)
        for j in range(2):
            br = exact_best_response(g, 0, [None, pure_policy(g, 1, [j])])
            assert br.value == M[:, j].max()
            assert np.argmax(br.policy.probs[0]) == np.argmax(M[:, j])


class TestValueIteration:
    def test_one_step(self):
        mdp = chain_mdp(np.array([[1.0, 0.0]]), {}, np.ones((1, 2)))
        qt = value_iteration(mdp)
        np.testing.assert_allclose(qt.q[0], [1.0, 0.0])

    def test_discounted_chain(self):
        # s0 -a0-> s1 -a0-> terminal with reward 1; a1 self-loops.
        r = np.array([[0.0, 0.0], [1.0, 0.0]])
        nxt = {(0, 0): 1, (0, 1): 0, (1, 1): 1}
        term = np.array([[0.0, 0.0], [1.0, 0.0]])
        mdp = chain_mdp(r, nxt, term)
        mdp.discount = 0.9
        qt = value_iteration(mdp, tol=1e-12)
        assert qt.values[1] == pytest.approx(1.0, abs=1e-9)
        assert qt.values[0] == pytest.approx(0.9, abs=1e-9)
        assert qt.q[0, 1] == pytest.approx(0.81, abs=1e-9)
        assert bellman_residual(mdp, qt) <= 1e-9

    def test_rejects_nonpositive_tol(self):
        mdp = chain_mdp(np.array([[1.0, 0.0]]), {}, np.ones((1, 2)))
        with pytest.raises(ValueError):
            value_iteration(mdp, tol=0.0)

    def test_exact_induced_model_matches_exact_br(self, kuhn):
        rng = np.random.default_rng(1)
        for _ in range(10):
            prof = [random_policy(kuhn, p, rng) for p in range(2)]
            for i in range(2):
                mdp = induce(kuhn, i, prof)
                qt = value_iteration(mdp)
                assert bellman_residual(mdp, qt) <= 1e-9
                assert mdp.start_value(qt.values) == pytest.approx(exact_best_response(kuhn, i, prof).value, abs=1e-9)

    def test_residual_on_estimated_model(self, kuhn):
        data = collect(kuhn, [uniform_policy(kuhn, p) for p in range(2)], 2000, 0)
        model = estimate_model(data, 0)
        qt = value_iteration(model.mdp)
        assert bellman_residual(model.mdp, qt) <= 1e-9


class TestIndependentBr:
    def test_close_to_exact_vs_uniform(self, kuhn):
        prof = [uniform_policy(kuhn, p) for p in range(2)]
        exact = exact_best_response(kuhn, 0, prof).value
        gaps = []
        for seed in range(5):
            res = independent_br(kuhn, 0, prof, 10_000, seed)
            assert res.episodes_consumed == 10_000
            gaps.append(exact - policy_value(kuhn, 0, res.policy, prof))
        assert np.median(gaps) <= 0.05

    def test_deterministic(self, kuhn):
        prof = [uniform_policy(kuhn, p) for p in range(2)]
        a = independent_br(kuhn, 1, prof, 500, 3)
        b = independent_br(kuhn, 1, prof, 500, 3)
        assert np.array_equal(a.policy.probs, b.policy.probs) and a.value == b.value

    def test_rejects_empty_budget(self, kuhn):
        with pytest.raises(ValueError):
            independent_br(kuhn, 0, [None, uniform_policy(kuhn, 1)], 0, 0)


class TestNaiveJbr:
    def test_full_coverage_close_to_exact(self, kuhn):
        prof = [uniform_policy(kuhn, p) for p in range(2)]
        data = collect(kuhn, prof, 50_000, 0)
        for i in range(2):
            res = naive_jbr(data, kuhn, i, prof[i])
            assert res.episodes_consumed == 0
            exact = exact_best_response(kuhn, i, prof).value
            assert policy_value(kuhn, i, res.policy, prof) >= exact - 0.05

    def test_empty_dataset_returns_baseline(self, kuhn):
        base = random_policy(kuhn, 0, np.random.default_rng(0))
        res = naive_jbr(JointDataset.empty(kuhn), kuhn, 0, base)
        np.testing.assert_array_equal(res.policy.probs, base.probs)

    def test_support_restricted_argmax(self):
        M = np.array([[0.2, 0.9], [0.8, -1.0], [0.5, 0.0]])
        g = matrix_game(M)
        data = collect(g, [uniform_policy(g, 0), pure_policy(g, 1, [0])], 500, 0)
        res = naive_jbr(data, g, 0, uniform_policy(g, 0))
        assert np.argmax(res.policy.probs[0]) == 1


@pytest.fixture(scope="module")
def setup(kuhn):
    rng = np.random.default_rng(5)
    prof = [random_policy(kuhn, p, rng, alpha=0.5) for p in range(2)]
    return prof, collect(kuhn, prof, 3000, 1)


class TestSpiJbr:
    def test_zero_wedge_equals_naive(self, kuhn, setup):
        prof, data = setup
        for i in range(2):
            a = spi_jbr(data, kuhn, i, SpiConfig(0, prof[i]))
            b = naive_jbr(data, kuhn, i, prof[i])
            np.testing.assert_array_equal(a.policy.probs, b.policy.probs)

    def test_infinite_wedge_equals_baseline(self, kuhn, setup):
        prof, data = setup
        for i in range(2):
            res = spi_jbr(data, kuhn, i, SpiConfig(float("inf"), prof[i]))
            np.testing.assert_allclose(res.policy.probs, prof[i].probs, atol=1e-15)

    @pytest.mark.parametrize("n_wedge", [5, 20, 100, 400])
    def test_pinned_mass_exact(self, kuhn, setup, n_wedge):
        prof, data = setup
        for i in range(2):
            res = spi_jbr(data, kuhn, i, SpiConfig(n_wedge, prof[i]))
            pinned = (data.counts[i] < n_wedge) & kuhn.legal_mask[i]
            assert np.array_equal(res.policy.probs[pinned], prof[i].probs[pinned])
            res.policy.validate(kuhn)

    def test_sweep_not_worse_than_naive(self, kuhn):
        wins = []
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            prof = [random_policy(kuhn, p, rng) for p in range(2)]
            data = collect(kuhn, prof, 1000, seed)
            naive = policy_value(kuhn, 0, naive_jbr(data, kuhn, 0, prof[0]).policy, prof)
            best = max(
                policy_value(kuhn, 0, spi_jbr(data, kuhn, 0, SpiConfig(n, prof[0])).policy, prof) for n in range(51)
            )
            wins.append(best - naive)
        assert np.median(wins) >= 0.0


class TestHierarchy:
    def test_exact_dominates(self, kuhn):
        rng = np.random.default_rng(11)
        for k in range(10):
            prof = [random_policy(kuhn, p, rng) for p in range(2)]
            data = collect(kuhn, prof, 2000, k)
            for i in range(2):
                exact = exact_best_response(kuhn, i, prof).value
                mdp = induce(kuhn, i, prof)
                assert exact >= mdp.start_value(value_iteration(mdp).values) - 1e-9
                for pol in (
                    naive_jbr(data, kuhn, i, prof[i]).policy,
                    spi_jbr(data, kuhn, i, SpiConfig(10, prof[i])).policy,
                ):
                    assert exact >= policy_value(kuhn, i, pol, prof) - 1e-12

    def test_spi_safety_with_full_coverage(self, kuhn):
        rng = np.random.default_rng(12)
        for k in range(10):
            prof = [random_policy(kuhn, p, rng, alpha=2.0) for p in range(2)]
            data = collect(kuhn, prof, 20_000, k)
            for i in range(2):
                base = policy_value(kuhn, i, prof[i], prof)
                res = spi_jbr(data, kuhn, i, SpiConfig(50, prof[i]))
                assert policy_value(kuhn, i, res.policy, prof) >= base - 0.05
