from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evpo.envs import (DOWN, LEFT, RIGHT, UP, EnvConfig, EnvKind, frozen_lake_optimal_success,
                       frozen_lake_policy_success, frozen_lake_transition_matrix,
                       frozen_lake_value_iteration, observe, parse_grid, render, reset, rollout,
                       slip_direction, sokoban_shortest_solution, step, uniform_policy)
from evpo.errors import GenerationError, InvalidTransitionError

GOLDEN = Path(__file__).parent / "golden"


class TestGeneration:
    def test_frozen_lake_golden_layout(self):
        state = reset(EnvConfig.frozen_lake(0))
        assert render(state) + "\n" == (GOLDEN / "frozenlake_4x4_h3_seed0.txt").read_text()

    def test_sokoban_golden_layout(self):
        state = reset(EnvConfig.mini_sokoban(7))
        assert render(state) + "\n" == (GOLDEN / "sokoban_5x5_seed7.txt").read_text()
        assert state.aux_pos != state.find("T")

    @given(st.integers(0, 10_000))
    def test_frozen_lake_invariants(self, seed):
        state = reset(EnvConfig.frozen_lake(seed, max_steps=10))
        flat = "".join(state.grid)
        assert flat.count("H") == 3 and flat[0] == "S" and flat[-1] == "G"
        assert frozen_lake_optimal_success(state) > 0
        assert state.agent_pos == (0, 0) and not state.done

    @given(st.integers(0, 10_000))
    def test_sokoban_invariants(self, seed):
        state = reset(EnvConfig.mini_sokoban(seed))
        assert state.aux_pos != state.find("T") and state.aux_pos != state.agent_pos
        assert sokoban_shortest_solution(state) is not None

    def test_deterministic(self):
        a = reset(EnvConfig.frozen_lake(3))
        b = reset(EnvConfig.frozen_lake(3))
        assert render(a) == render(b)

    def test_unsatisfiable_hole_count(self):
        with pytest.raises(GenerationError):
            reset(EnvConfig.frozen_lake(0, hole_count=14))

    @given(st.integers(0, 5000), st.sampled_from(["fl", "sk"]))
    def test_render_parse_round_trip(self, seed, kind):
        cfg = EnvConfig.frozen_lake(seed) if kind == "fl" else EnvConfig.mini_sokoban(seed)
        state = reset(cfg)
        back = parse_grid(render(state), state.max_steps)
        assert back == state


class TestFrozenLakeDynamics:
    def test_slip_directions(self):
        assert [slip_direction(UP, u) for u in (0.1, 0.5, 0.9)] == [RIGHT, UP, LEFT]
        assert [slip_direction(LEFT, u) for u in (0.1, 0.5, 0.9)] == [UP, LEFT, DOWN]

    def test_slip_frequencies(self):
        state = parse_grid("FFFF\nFAFF\nFFFF\nFFFG", max_steps=5)
        rng = np.random.default_rng(0)
        counts = {}
        n = 30_000
        for _ in range(n):
            pos = step(state, RIGHT, rng).agent_pos
            counts[pos] = counts.get(pos, 0) + 1
        assert set(counts) == {(0, 1), (1, 2), (2, 1)}
        for c in counts.values():
            # binomial(1/3) standard error is ~0.0027
            assert abs(c / n - 1 / 3) < 4 * np.sqrt(2 / 9 / n)

    def test_wall_is_noop_and_hole_ends(self):
        state = parse_grid("AFFF\nHFFF\nFFFF\nFFFG", max_steps=5)

        class Fixed:
            def __init__(self, u):
                self.u = u

            def random(self):
                return self.u

        assert step(state, UP, Fixed(0.5)).agent_pos == (0, 0)
        fell = step(state, DOWN, Fixed(0.5))
        assert fell.done and fell.terminal_reward == 0.0

    def test_goal_and_budget(self):
        state = parse_grid("FFFF\nFFFF\nFFFF\nFFAG", max_steps=2)
        rng = np.random.default_rng(1)
        s = state
        while not s.done:
            s = step(s, RIGHT, rng)
        assert s.terminal_reward in (0.0, 1.0) and s.step_count <= 2
        with pytest.raises(InvalidTransitionError):
            step(s, RIGHT, rng)

    def test_transition_matrix_is_stochastic(self):
        P = frozen_lake_transition_matrix(reset(EnvConfig.frozen_lake(0)))
        np.testing.assert_allclose(P.sum(axis=2), 1.0)

    def test_uniform_policy_success_rate(self):
        cfg = EnvConfig.frozen_lake(0, max_steps=10)
        state = reset(cfg)
        exact = frozen_lake_policy_success(state, np.full((16, 4), 0.25))
        assert 0 < exact < 1
        rng = np.random.default_rng(2024)
        table = uniform_policy(cfg.n_states)
        wins = np.array([rollout(cfg, table, rng).terminal_return for _ in range(10_000)])
        se = np.sqrt(exact * (1 - exact) / len(wins))
        assert 0 < wins.mean() < 1
        assert abs(wins.mean() - exact) < 3 * se

    def test_optimal_policy_matches_value_iteration(self):
        cfg = EnvConfig.frozen_lake(0, max_steps=10)
        state = reset(cfg)
        V, Q = frozen_lake_value_iteration(state)
        target = frozen_lake_optimal_success(state)
        assert target == V[10, 0]
        rng = np.random.default_rng(99)
        n = 10_000
        wins = 0.0
        for _ in range(n):
            s = state
            while not s.done:
                k = s.max_steps - s.step_count
                p = s.agent_pos[0] * 4 + s.agent_pos[1]
                s = step(s, int(np.argmax(Q[k, p])), rng)
            wins += s.terminal_reward
        se = np.sqrt(target * (1 - target) / n)
        assert abs(wins / n - target) < 2 * se


class TestSokobanDynamics:
    def test_push_onto_target(self):
        state = parse_grid("_____\n_PBT_\n_____\n_____\n_____", max_steps=5)
        s = step(state, RIGHT, None)
        assert s.done and s.terminal_reward == 1.0 and s.aux_pos == (1, 3)

    def test_box_into_corner_is_dead(self):
        state = parse_grid("_BP__\n_____\n_____\n____T\n_____", max_steps=5)
        s = step(state, LEFT, None)
        assert s.done and s.terminal_reward == 0.0 and s.aux_pos == (0, 0)

    def test_blocked_push(self):
        state = parse_grid("_____\n___PB\n_____\n____T\n_____", max_steps=5)
        s = step(state, RIGHT, None)
        assert s.agent_pos == (1, 3) and s.aux_pos == (1, 4) and not s.done

    def test_wall_policy_times_out(self):
        seed = next(s for s in range(1000) if reset(EnvConfig.mini_sokoban(s)).agent_pos[0] == 0)
        cfg = EnvConfig.mini_sokoban(seed)
        tr = rollout(cfg, lambda s: np.array([0.0, 0.0, 0.0, 1.0]), np.random.default_rng(0))
        assert tr.terminal_return == 0.0 and len(tr) == cfg.max_steps

    @given(st.integers(0, 2000))
    def test_bfs_plan_length_is_minimal_budget(self, seed):
        state = reset(EnvConfig.mini_sokoban(seed))
        d = sokoban_shortest_solution(state)
        assert sokoban_shortest_solution(replace(state, max_steps=d)) == d
        assert sokoban_shortest_solution(replace(state, max_steps=d - 1)) is None


class TestRollout:
    @given(st.integers(0, 500), st.integers(0, 500), st.sampled_from(["fl", "sk"]))
    def test_rollout_equals_stepping(self, task, seed, kind):
        cfg = EnvConfig.frozen_lake(task) if kind == "fl" else EnvConfig.mini_sokoban(task)
        table = np.random.default_rng(seed).dirichlet(np.ones(4), size=cfg.n_states)
        tr = rollout(cfg, table, np.random.default_rng(seed))
        rng = np.random.default_rng(seed)
        s = reset(cfg)
        states, actions = [], []
        while not s.done:
            obs = observe(s)
            a = min(int(np.searchsorted(np.cumsum(table[obs]), rng.random(), side="right")), 3)
            states.append(obs)
            actions.append(a)
            s = step(s, a, rng)
        assert tr.states.tolist() == states and tr.actions.tolist() == actions
        assert tr.terminal_return == s.terminal_reward

    @given(st.integers(0, 3000), st.sampled_from(["fl", "sk"]))
    def test_state_ids_in_range(self, seed, kind):
        cfg = EnvConfig.frozen_lake(seed) if kind == "fl" else EnvConfig.mini_sokoban(seed)
        tr = rollout(cfg, uniform_policy(cfg.n_states), np.random.default_rng(seed))
        assert tr.states.min() >= 0 and tr.states.max() < cfg.n_states
        assert len(tr) <= cfg.max_steps and tr.rewards[:-1].sum() == 0

    def test_observation_encodes_hole_neighbours(self):
        state = parse_grid("AHFF\nHFFF\nFFFF\nFFFG", max_steps=5)
        assert observe(state) == 0 * 16 + (1 << RIGHT) + (1 << DOWN)

    def test_kind_enum(self):
        assert EnvKind("MiniSokoban") is EnvKind.MINI_SOKOBAN
