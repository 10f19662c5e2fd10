import numpy as np
import pytest

from jbrpsro.games import build_game, random_policy, uniform_policy
from jbrpsro.meta import (
    EmpiricalGame,
    MetaProfile,
    exact_entry,
    extend,
    load_checkpoint,
    projected_replicator_dynamics,
    restricted_regret,
    save_checkpoint,
)


def zero_sum(M):
    M = np.asarray(M, dtype=float)
    return np.stack([M, -M])


PENNIES = zero_sum([[1, -1], [-1, 1]])


@pytest.fixture(scope="module")
def kuhn():
    return build_game("kuhn")


class TestPrd:
    def test_singleton(self):
        out = projected_replicator_dynamics(zero_sum([[0.3]]), steps=10)
        assert [p.tolist() for p in out.probs] == [[1.0], [1.0]]

    def test_matching_pennies(self):
        out = projected_replicator_dynamics(PENNIES)
        for p in out.probs:
            assert np.abs(p - 0.5).max() <= 0.05
        assert restricted_regret(PENNIES, out) < 0.05

    def test_dominant_row(self):
        floor = 1e-3
        out = projected_replicator_dynamics(zero_sum([[1, 1], [0, 0]]), steps=20_000, gamma_floor=floor)
        assert out.probs[0][0] >= 1 - 2 * floor

    def test_output_on_floored_simplex(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            floor = 1e-3
            out = projected_replicator_dynamics(zero_sum(rng.uniform(-1, 1, (4, 3))), steps=5000, gamma_floor=floor)
            for p in out.probs:
                assert p.sum() == pytest.approx(1.0, abs=1e-12)
                assert p.min() >= floor - 1e-12

    def test_random_zero_sum_regret(self):
        rng = np.random.default_rng(1)
        regrets = [
            restricted_regret(T, projected_replicator_dynamics(T))
            for T in (zero_sum(rng.uniform(-1, 1, (3, 3))) for _ in range(20))
        ]
        assert np.median(regrets) <= 0.05

    def test_readout_window(self):
        T = zero_sum([[2, -1], [-1, 1]])
        a = projected_replicator_dynamics(T, steps=2000, average_from=0.0)
        b = projected_replicator_dynamics(T, steps=2000, average_from=0.5)
        assert not np.array_equal(a.probs[0], b.probs[0])

    @pytest.mark.parametrize("kw", [dict(steps=0), dict(gamma_floor=0.5), dict(average_from=1.0)])
    def test_rejects_bad_parameters(self, kw):
        with pytest.raises(ValueError):
            projected_replicator_dynamics(PENNIES, **kw)


class TestRegret:
    def test_singleton_is_zero(self):
        assert restricted_regret(zero_sum([[2.0]]), MetaProfile([np.ones(1), np.ones(1)])) == 0.0

    def test_pennies_equilibrium(self):
        half = np.array([0.5, 0.5])
        assert restricted_regret(PENNIES, MetaProfile([half, half])) == 0.0

    def test_pennies_pure(self):
        # Row already wins at (heads, heads); only the column player gains 2.
        e0, e1 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        assert restricted_regret(PENNIES, MetaProfile([e0, e0])) == 2.0
        assert restricted_regret(PENNIES, MetaProfile([e0, e1])) == 2.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            restricted_regret(PENNIES, MetaProfile([np.ones(1), np.ones(1)]))


class TestEmpiricalGame:
    def grow(self, game, k, seed=0):
        rng = np.random.default_rng(seed)
        eg = EmpiricalGame.empty()
        for _ in range(k):
            eg = extend(eg, [random_policy(game, p, rng) for p in range(2)], game)
        return eg

    def test_first_entry(self, kuhn):
        eg = extend(EmpiricalGame.empty(), [uniform_policy(kuhn, p) for p in range(2)], kuhn)
        assert eg.shape == (1, 1)
        assert eg.payoffs[0, 0, 0] == pytest.approx(0.125, abs=1e-12)

    def test_entries_match_recomputation(self, kuhn):
        eg = self.grow(kuhn, 4)
        for i in range(4):
            for j in range(4):
                np.testing.assert_allclose(eg.payoffs[:, i, j], exact_entry(kuhn, eg, i, j), atol=1e-12)

    def test_extend_fills_five_new_entries_and_keeps_old_bits(self, kuhn):
        eg2 = self.grow(kuhn, 2)
        # Poison the existing block: extend must copy it, not recompute it.
        eg2.payoffs[:] = 123.0
        rng = np.random.default_rng(9)
        eg3 = extend(eg2, [random_policy(kuhn, p, rng) for p in range(2)], kuhn)
        assert eg3.shape == (3, 3)
        assert eg3.payoffs[:, :2, :2].tobytes() == eg2.payoffs.tobytes()
        assert (eg3.payoffs[0] != 123.0).sum() == 5

    def test_extend_wants_one_policy_per_player(self, kuhn):
        with pytest.raises(ValueError):
            extend(EmpiricalGame.empty(), [uniform_policy(kuhn, 0)], kuhn)

    def test_rollout_mode_is_unbiased_estimate(self, kuhn):
        rng = np.random.default_rng(2)
        pols = [random_policy(kuhn, p, rng) for p in range(2)]
        eg = extend(EmpiricalGame.empty(mode="rollout:20000"), pols, kuhn, np.random.default_rng(0))
        exact = extend(EmpiricalGame.empty(), pols, kuhn)
        assert abs(eg.payoffs[0, 0, 0] - exact.payoffs[0, 0, 0]) <= 0.05

    def test_checkpoint_round_trip(self, kuhn, tmp_path):
        eg = self.grow(kuhn, 3)
        save_checkpoint(eg, tmp_path / "eg.npz", kuhn)
        back = load_checkpoint(tmp_path / "eg.npz", kuhn)
        assert back.payoffs.tobytes() == eg.payoffs.tobytes()
        for a, b in zip(eg.policy_sets, back.policy_sets):
            assert all(np.array_equal(x.probs, y.probs) for x, y in zip(a, b))
        pa = projected_replicator_dynamics(eg, steps=5000)
        pb = projected_replicator_dynamics(back, steps=5000)
        assert all(np.array_equal(x, y) for x, y in zip(pa.probs, pb.probs))
        # Extending the reloaded game matches extending the original.
        rng = np.random.default_rng(4)
        new = [random_policy(kuhn, p, rng) for p in range(2)]
        assert extend(eg, new, kuhn).payoffs.tobytes() == extend(back, new, kuhn).payoffs.tobytes()

    def test_checkpoint_rejects_other_game(self, kuhn, tmp_path):
        save_checkpoint(self.grow(kuhn, 1), tmp_path / "eg.npz", kuhn)
        with pytest.raises(ValueError):
            load_checkpoint(tmp_path / "eg.npz", build_game("leduc"))
