import numpy as np
import pytest

from jbrpsro.games import BehaviorPolicy, build_game, expected_payoff, matrix_game, pure_policy, random_policy, uniform_policy
from jbrpsro.induced import MixedStrategy, history_kernel, induce, to_behavior
from jbrpsro.oracles import exact_best_response, value_iteration


@pytest.fixture(scope="module")
def kuhn():
    return build_game("kuhn")


M = np.array([[0.5, -1.0], [0.25, 0.75]])


class TestToBehavior:
    def test_single_atom_is_identity(self, kuhn):
        pol = random_policy(kuhn, 0, np.random.default_rng(0))
        out = to_behavior(MixedStrategy(0, [(pol, 1.0)]), kuhn)
        np.testing.assert_allclose(out.probs, pol.probs, atol=1e-12)

    def test_duplicate_atoms_collapse(self, kuhn):
        pol = random_policy(kuhn, 1, np.random.default_rng(1))
        out = to_behavior(MixedStrategy(1, [(pol, 0.3), (pol, 0.7)]), kuhn)
        np.testing.assert_allclose(out.probs, pol.probs, atol=1e-12)

    def test_bet_check_mixture_is_realization_equivalent(self, kuhn):
        bet = pure_policy(kuhn, 0, [1] * 6)
        check = pure_policy(kuhn, 0, [0] * 6)
        mixed = to_behavior(MixedStrategy(0, [(bet, 0.5), (check, 0.5)]), kuhn)
        for key in ("P0:J:", "P0:Q:", "P0:K:"):
            i = kuhn.infostate_index[0][key]
            np.testing.assert_allclose(mixed.probs[i], [0.5, 0.5])
        rng = np.random.default_rng(2)
        for _ in range(5):
            opp = random_policy(kuhn, 1, rng)
            lhs = expected_payoff(kuhn, [mixed, opp])[0]
            rhs = 0.5 * expected_payoff(kuhn, [bet, opp])[0] + 0.5 * expected_payoff(kuhn, [check, opp])[0]
            assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_unreached_infostates_are_uniform(self, kuhn):
        # Always betting first never reaches "check, opponent bets".
        bet = pure_policy(kuhn, 0, [1] * 6)
        out = to_behavior(MixedStrategy(0, [(bet, 1.0)]), kuhn)
        i = kuhn.infostate_index[0]["P0:J:pb"]
        np.testing.assert_allclose(out.probs[i], [0.5, 0.5])

    def test_weights_must_be_simplex(self, kuhn):
        pol = uniform_policy(kuhn, 0)
        with pytest.raises(ValueError):
            MixedStrategy(0, [(pol, 0.6), (pol, 0.6)])


class TestInduce:
    def test_matrix_pure_column(self):
        g = matrix_game(M)
        for j in range(2):
            mdp = induce(g, 0, [None, pure_policy(g, 1, [j])])
            np.testing.assert_allclose(mdp.reward[0], M[:, j])
            np.testing.assert_allclose(mdp.terminal_prob[0], 1.0)

    def test_matrix_uniform_column(self):
        g = matrix_game(M)
        mdp = induce(g, 0, [None, uniform_policy(g, 1)])
        np.testing.assert_allclose(mdp.reward[0], M.mean(axis=1))

    def test_rows_sum_to_one(self, kuhn):
        mdp = induce(kuhn, 1, [random_policy(kuhn, 0, np.random.default_rng(5)), None])
        mdp.check()

    def test_kuhn_uniform_value_matches_exact_br(self, kuhn):
        opp = [None, uniform_policy(kuhn, 1)]
        mdp = induce(kuhn, 0, opp)
        v = mdp.start_value(value_iteration(mdp).values)
        assert v == pytest.approx(exact_best_response(kuhn, 0, opp).value, abs=1e-9)
        assert v == pytest.approx(0.5, abs=1e-12)

    def test_opponent_zero_probability_prunes(self, kuhn):
        # Player 0 never bets: player 1 never sees a bet.
        check = pure_policy(kuhn, 0, [0] * 6)
        mdp = induce(kuhn, 1, [check, None])
        for key in ("P1:J:b", "P1:Q:b", "P1:K:b"):
            assert not mdp.support[kuhn.infostate_index[1][key]].any()


class TestLinearity:
    @pytest.mark.parametrize("alpha", [0.0, 0.25, 0.5, 1.0])
    def test_history_kernel_is_linear_in_opponent(self, kuhn, alpha):
        rng = np.random.default_rng(7)
        nu, mu = random_policy(kuhn, 1, rng), random_policy(kuhn, 1, rng)
        blend = BehaviorPolicy(1, alpha * nu.probs + (1 - alpha) * mu.probs)
        P_nu, r_nu = history_kernel(kuhn, 0, [None, nu])
        P_mu, r_mu = history_kernel(kuhn, 0, [None, mu])
        P_b, r_b = history_kernel(kuhn, 0, [None, blend])
        np.testing.assert_allclose(P_b.toarray(), alpha * P_nu.toarray() + (1 - alpha) * P_mu.toarray(), atol=1e-9)
        np.testing.assert_allclose(r_b, alpha * r_nu + (1 - alpha) * r_mu, atol=1e-9)

    def test_history_kernel_rows_are_distributions(self, kuhn):
        P, _ = history_kernel(kuhn, 0, [None, uniform_policy(kuhn, 1)])
        sums = np.asarray(P.sum(axis=1)).ravel()
        assert np.all((np.abs(sums - 1.0) < 1e-9) | (sums == 0.0))
