import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_group
from evpo.advantages import ppo_advantages
from evpo.agent import (TabularAgent, critic_loss, critic_update, flatten_batch, inject_value_noise,
                        ppo_update, softmax, surrogate_gradient, surrogate_objective)
from evpo.errors import InvalidInputError


def fd_gradient(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def random_instance(rng, n_states=4, n_actions=3, n_steps=12, spread=0.5):
    logits = rng.normal(size=(n_states, n_actions))
    old = logits + rng.normal(scale=spread, size=logits.shape)
    states = rng.integers(0, n_states, n_steps)
    actions = rng.integers(0, n_actions, n_steps)
    adv = rng.normal(size=n_steps)
    ref = rng.normal(size=logits.shape)
    return logits, old, states, actions, adv, ref


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestPolicy:
    def test_uniform(self):
        agent = TabularAgent.create(3, 4)
        np.testing.assert_allclose(agent.act_distribution(1), [0.25] * 4)

    def test_log3(self):
        agent = TabularAgent.create(1, 4)
        agent.logits[0, 0] = np.log(3)
        np.testing.assert_allclose(agent.act_distribution(0), [0.5, 1 / 6, 1 / 6, 1 / 6])

    @given(st.lists(st.floats(-30, 30), min_size=4, max_size=4), st.floats(-100, 100))
    def test_shift_invariance_and_normalization(self, logits, c):
        p = softmax(np.array(logits))
        assert abs(p.sum() - 1) < 1e-12
        np.testing.assert_allclose(softmax(np.array(logits) + c), p, atol=1e-12)

    def test_unknown_state_is_uniform(self):
        agent = TabularAgent.create(2, 4)
        np.testing.assert_allclose(agent.act_distribution(17), [0.25] * 4)


class TestSurrogateGradient:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        logits, old, s, a, adv, ref = random_instance(rng)
        kw = dict(clip_low=0.2, clip_high=0.28, entropy_coef=0.01 * (seed % 3),
                  kl_coef=0.05 * (seed % 2), ref_logits=ref)
        g, _, _ = surrogate_gradient(logits, old, s, a, adv, **kw)
        fd = fd_gradient(lambda x: surrogate_objective(x, old, s, a, adv, **kw), logits)
        assert relative_error(g, fd) < 1e-4

    def test_single_step_score_function(self):
        logits = np.array([[0.3, -0.2, 0.5]])
        g, ratio, active = surrogate_gradient(logits, logits, np.array([0]), np.array([2]),
                                              np.array([1.0]))
        score = -softmax(logits[0])
        score[2] += 1
        np.testing.assert_allclose(g[0], score, atol=1e-15)
        assert ratio[0] == 1.0 and active[0]

    def test_clipped_step_has_no_gradient(self):
        old = np.zeros((1, 3))
        logits = np.array([[2.0, 0.0, 0.0]])  # ratio of action 0 is far above 1.2
        g, ratio, active = surrogate_gradient(logits, old, np.array([0]), np.array([0]),
                                              np.array([1.0]))
        assert ratio[0] > 1.2 and not active[0]
        assert np.all(g == 0)


class TestPPOUpdate:
    def _group(self, values=(0.2, 0.5)):
        return make_group([list(values), list(values)], [1, 0])

    def test_zero_advantage_leaves_logits(self):
        agent = TabularAgent.create(4, 4)
        grp = make_group([[1.0, 1.0], [0.0]], [1, 0])
        before = agent.logits.copy()
        report = ppo_update(agent, [grp], [ppo_advantages(grp)], before.copy())
        assert report.actor_grad_norm == 0.0
        np.testing.assert_array_equal(agent.logits, before)

    def test_shape_mismatch(self):
        agent = TabularAgent.create(4, 4)
        grp = self._group()
        with pytest.raises(InvalidInputError):
            ppo_update(agent, [grp], [], agent.logits.copy())
        with pytest.raises(InvalidInputError):
            ppo_update(agent, [grp], [ppo_advantages(grp)], np.zeros((3, 4)))

    def test_step_is_gradient_ascent(self):
        agent = TabularAgent.create(4, 4, actor_lr=0.5, precondition=False)
        grp = self._group()
        adv = [ppo_advantages(grp)]
        old = agent.logits.copy()
        g, _, _ = surrogate_gradient(old, old, *_flat(grp, adv))
        report = ppo_update(agent, [grp], adv, old)
        np.testing.assert_allclose(agent.logits, old + 0.5 * g)
        assert report.actor_grad_norm == pytest.approx(np.linalg.norm(g))

    def test_preconditioning_scales_by_visits(self):
        agent = TabularAgent.create(4, 4, actor_lr=0.5)
        grp = self._group()
        adv = [ppo_advantages(grp)]
        old = agent.logits.copy()
        s, a, A = _flat(grp, adv)
        g, _, _ = surrogate_gradient(old, old, s, a, A)
        counts = np.bincount(s, minlength=4)
        scale = np.where(counts > 0, len(s) / np.maximum(counts, 1), 0)
        ppo_update(agent, [grp], adv, old)
        np.testing.assert_allclose(agent.logits, old + 0.5 * g * scale[:, None])


def _flat(grp, advs):
    return flatten_batch([grp], advs)


class TestCritic:
    def test_single_state_hand_gradient(self):
        agent = TabularAgent.create(3, 4, critic_lr=0.5)
        grp = make_group([[0.0], [0.0]], [1, 1])
        critic_update(agent, [grp])
        assert agent.values[0] == pytest.approx(1.0)

    def test_fixed_point_and_unvisited(self):
        agent = TabularAgent.create(5, 4, critic_lr=0.3)
        agent.values[:] = [1.0, 1.0, 7.0, 7.0, 7.0]
        grp = make_group([[1.0, 1.0], [1.0]], [1, 1])
        report = critic_update(agent, [grp])
        assert report.critic_loss == 0.0
        np.testing.assert_array_equal(agent.values, [1.0, 1.0, 7.0, 7.0, 7.0])

    @given(st.floats(0.01, 0.5), st.lists(st.integers(0, 1), min_size=2, max_size=8))
    def test_moves_towards_mean_return(self, lr, returns):
        agent = TabularAgent.create(2, 4, critic_lr=lr)
        grp = make_group([[0.0]] * len(returns), returns)
        critic_update(agent, [grp])
        assert agent.values[0] == pytest.approx(2 * lr * np.mean(returns))

    def test_loss_decreases(self, rng):
        agent = TabularAgent.create(6, 4, critic_init_std=1.0, rng=rng, critic_lr=0.2)
        grp = make_group([[0, 0, 0]] * 3, [1, 0, 1])
        before = critic_loss(agent, [grp])
        critic_update(agent, [grp])
        assert critic_loss(agent, [grp]) < before


class TestNoise:
    def test_zero_sigma(self, rng):
        agent = TabularAgent.create(10, 4, critic_init_std=1.0, rng=rng)
        noisy = inject_value_noise(agent, 0.0, np.random.default_rng(0))
        np.testing.assert_array_equal(noisy.read_values(np.arange(10)), agent.values)

    def test_noise_std_and_table_untouched(self, rng):
        agent = TabularAgent.create(10, 4, critic_init_std=1.0, rng=rng)
        noisy = inject_value_noise(agent, 0.3, np.random.default_rng(0))
        states = np.arange(100_000) % 10
        diff = noisy.read_values(states) - agent.values[states]
        assert abs(diff.std() - 0.3) < 0.02 * 0.3
        np.testing.assert_array_equal(noisy.values, agent.values)
        # fresh draws per read
        assert not np.array_equal(noisy.read_values([0, 0]), noisy.read_values([0, 0]))

    def test_negative_sigma(self, rng):
        with pytest.raises(InvalidInputError):
            inject_value_noise(TabularAgent.create(2, 4), -1.0, rng)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        agent = TabularAgent.create(7, 4, critic_init_std=1.0, rng=rng)
        agent.logits[:] = rng.normal(size=agent.logits.shape)
        agent.save(tmp_path / "a.ckpt")
        back = TabularAgent.load(tmp_path / "a.ckpt")
        np.testing.assert_array_equal(back.logits, agent.logits)
        np.testing.assert_array_equal(back.values, agent.values)
        assert (tmp_path / "a.ckpt").stat().st_size == 8 + 16 + 8 * 7 * 5

    def test_rejects_garbage(self, tmp_path):
        (tmp_path / "x").write_bytes(b"nonsense" * 4)
        with pytest.raises(InvalidInputError):
            TabularAgent.load(tmp_path / "x")
