import random

import pytest

from textmarl.envs import action_vocabulary, make_env
from textmarl.envs.piston_line import PistonLineState
from textmarl.errors import ActionError, EnvError, UnknownEnvError
from textmarl.types import Action


def hold_all(n):
    return tuple(Action(i, "hold") for i in range(n))


def state(heights, ball_x, vx=0.0, step=0):
    return PistonLineState(piston_heights=tuple(heights), ball_x=ball_x,
                           ball_vx=vx, step_count=step, done=False)


class TestReset:
    def test_same_seed_same_state(self):
        env = make_env("piston_line", 5, 30)
        s1, o1 = env.reset(42)
        s2, o2 = env.reset(42)
        assert s1 == s2
        assert o1 == o2

    def test_ball_in_range_over_100_seeds(self):
        env = make_env("piston_line", 5, 30)
        for seed in range(100):
            s, _ = env.reset(seed)
            assert 0.0 <= s.ball_x <= 5.0
            assert all(0.0 <= h <= 1.0 for h in s.piston_heights)

    def test_unknown_env(self):
        with pytest.raises(UnknownEnvError):
            make_env("pachinko", 3, 10)


class TestStep:
    def test_progress_reward_formula(self):
        # speed over a 0.2-high piston is 0.5 * 0.8 = 0.4 cells/step
        env = make_env("piston_line", 5, 30)
        s = state([0.2] * 5, ball_x=2.9)
        outcome = env.step(s, hold_all(5))
        assert s.ball_x - outcome.state.ball_x == pytest.approx(0.4)
        assert outcome.reward == pytest.approx(0.4 * 1.0 - 0.1)

    def test_stationary_ball_pays_only_penalty(self):
        env = make_env("piston_line", 5, 30)
        s = state([1.0] * 5, ball_x=2.5)
        outcome = env.step(s, hold_all(5))
        assert outcome.state.ball_x == 2.5
        assert outcome.reward == pytest.approx(-0.1)

    def test_raised_piston_blocks_entry(self):
        env = make_env("piston_line", 5, 30)
        s = state([0.0, 0.9, 0.0, 0.0, 0.0], ball_x=2.4)
        outcome = env.step(s, hold_all(5))
        # ball crosses into cell 1's boundary and stops against piston 1
        assert outcome.state.ball_x == 2.0
        outcome2 = env.step(outcome.state, hold_all(5))
        assert outcome2.state.ball_x == 2.0
        assert outcome2.reward == pytest.approx(-0.1)

    def test_terminal_at_left_wall(self):
        env = make_env("piston_line", 3, 30)
        s = state([0.0, 0.0, 0.0], ball_x=0.3)
        outcome = env.step(s, hold_all(3))
        assert outcome.state.ball_x == 0.0
        assert outcome.done

    def test_horizon_terminal(self):
        env = make_env("piston_line", 2, 1)
        s, _ = env.reset(0)
        outcome = env.step(s, hold_all(2))
        assert outcome.done

    def test_out_of_vocabulary_action_names_agent(self):
        env = make_env("piston_line", 3, 30)
        s, _ = env.reset(0)
        bad = (Action(0, "hold"), Action(1, "jump"), Action(2, "hold"))
        with pytest.raises(ActionError) as excinfo:
            env.step(s, bad)
        assert "agent 1" in str(excinfo.value)
        assert "jump" in str(excinfo.value)

    def test_step_is_pure(self):
        env = make_env("piston_line", 4, 30)
        s, _ = env.reset(7)
        moves = tuple(Action(i, "down") for i in range(4))
        first = env.step(s, moves)
        second = env.step(s, moves)
        assert first == second

    def test_piston_moves_clamped(self):
        env = make_env("piston_line", 2, 30)
        s = state([0.0, 1.0], ball_x=1.5)
        outcome = env.step(s, (Action(0, "down"), Action(1, "up")))
        assert outcome.state.piston_heights == (0.0, 1.0)

    def test_stepping_done_state_rejected(self):
        env = make_env("piston_line", 2, 30)
        s = PistonLineState((0.0, 0.0), 0.0, 0.0, 3, True)
        with pytest.raises(EnvError):
            env.step(s, hold_all(2))


class TestRewardConservation:
    def test_conservation_over_random_episodes(self):
        rng = random.Random(1234)
        for episode in range(300):
            n = rng.randint(1, 6)
            horizon = rng.randint(1, 25)
            env = make_env("piston_line", n, horizon)
            s, _ = env.reset(rng.randrange(10 ** 6))
            x0 = s.ball_x
            total = 0.0
            steps = 0
            while True:
                joint = tuple(Action(i, rng.choice(("up", "down", "hold")))
                              for i in range(n))
                outcome = env.step(s, joint)
                total += outcome.reward
                steps += 1
                s = outcome.state
                if outcome.done:
                    break
            assert total == pytest.approx(1.0 * (x0 - s.ball_x) - 0.1 * steps,
                                          abs=1e-9)


class TestVocabulary:
    def test_three_actions(self):
        assert action_vocabulary("piston_line") == ["up", "down", "hold"]
        env = make_env("piston_line", 4, 10)
        assert env.action_vocabulary(0) == env.action_vocabulary(3)

    def test_unknown_env_errors(self):
        with pytest.raises(UnknownEnvError):
            action_vocabulary("pachinko")


class TestTextualize:
    def test_ball_outside_window_not_visible(self):
        env = make_env("piston_line", 8, 30)
        s = state([0.5] * 8, ball_x=7.3)
        text = env.textualize(s, 2).text
        assert "ball: not visible" in text

    def test_relative_phrasing(self):
        env = make_env("piston_line", 8, 30)
        s = state([0.5] * 8, ball_x=3.6)
        text = env.textualize(s, 2).text
        assert "ball is 1 cell to your right" in text

    def test_deterministic(self):
        env = make_env("piston_line", 5, 30)
        s, _ = env.reset(3)
        assert env.textualize(s, 2).text == env.textualize(s, 2).text

    def test_edge_pistons_see_wall(self):
        env = make_env("piston_line", 3, 30)
        s = state([0.1, 0.2, 0.3], ball_x=1.5)
        assert "left neighbor height: wall" in env.textualize(s, 0).text
        assert "right neighbor height: wall" in env.textualize(s, 2).text

    def test_information_flow_no_far_heights_no_absolute_ball(self):
        # distinct heights so substring checks cannot collide
        env = make_env("piston_line", 6, 30)
        heights = [0.13, 0.27, 0.41, 0.58, 0.76, 0.94]
        s = state(heights, ball_x=2.2)
        for agent in range(6):
            text = env.textualize(s, agent).text
            for other in range(6):
                if abs(other - agent) > 1:
                    assert f"{heights[other]:.2f}" not in text
            assert "x=" not in text
            assert f"{s.ball_x:.3f}" not in text


class TestGlobalTextualize:
    def test_lists_all_heights_and_absolute_ball(self):
        env = make_env("piston_line", 3, 30)
        s = state([0.15, 0.35, 0.85], ball_x=1.7)
        text = env.global_textualize(s)
        for h in s.piston_heights:
            assert f"{h:.2f}" in text
        assert "x=1.700" in text

    def test_injectivity_spot_check(self):
        env = make_env("piston_line", 4, 30)
        rng = random.Random(99)
        seen = set()
        for _ in range(100):
            heights = [rng.randrange(11) / 10 for _ in range(4)]
            s = state(heights, ball_x=rng.uniform(0, 4), step=rng.randrange(30))
            seen.add(env.global_textualize(s))
        assert len(seen) == 100

    def test_deterministic(self):
        env = make_env("piston_line", 4, 30)
        s, _ = env.reset(5)
        assert env.global_textualize(s) == env.global_textualize(s)
