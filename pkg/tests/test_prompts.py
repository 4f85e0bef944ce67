from pathlib import Path

import pytest

from golden_cases import (
    golden_renders,
    piston_env,
    piston_state,
    policy,
    small_global_texts,
    small_trajectory,
)
from textmarl.envs import make_env
from textmarl.prompts import (
    load_template,
    render_actor,
    render_aggregator,
    render_critic,
    render_gradient,
    render_optimizer,
    render_template,
    serialize_trajectory,
)
from textmarl.scripted import piston_guard_policy
from textmarl.types import (
    Action,
    LanguageCredit,
    LanguageGradient,
    Polarity,
    Step,
    TextObservation,
    Trajectory,
)

GOLDEN_DIR = Path(__file__).parent / "golden"


@pytest.mark.parametrize("name", sorted(golden_renders()))
def test_golden_bytes(name):
    expected = (GOLDEN_DIR / f"{name}.txt").read_text(encoding="utf-8")
    assert golden_renders()[name] + "\n" == expected


def test_render_determinism():
    first = golden_renders()
    second = golden_renders()
    assert first == second


class TestActorRender:
    def test_contains_agent_policy_obs_vocabulary(self):
        env = piston_env()
        obs = env.textualize(piston_state(), 1)
        request = render_actor(policy(1), obs, env.action_vocabulary(1))
        text = request.full_text
        assert "agent 1" in text.lower()
        for item in ("up", "down", "hold"):
            assert item in text
        assert obs.text in text
        assert "Thinking:" in text and "Action:" in text
        assert request.tag == "actor"
        assert request.temperature == pytest.approx(0.7)

    def test_ctde_separation_across_agents(self):
        env = piston_env()
        state = piston_state()
        obs0, obs1 = env.textualize(state, 0), env.textualize(state, 1)
        request0 = render_actor(policy(0), obs0, env.action_vocabulary(0))
        assert obs1.text not in request0.full_text
        assert env.global_textualize(state) not in request0.full_text

    def test_empty_vocabulary_rejected(self):
        env = piston_env()
        obs = env.textualize(piston_state(), 1)
        with pytest.raises(ValueError):
            render_actor(policy(1), obs, [])

    def test_actor_never_contains_global_text_both_envs(self):
        for env_name, n in (("piston_line", 4), ("kitchen_grid", 2)):
            env = make_env(env_name, n, 20)
            for seed in range(10):
                state, observations = env.reset(seed)
                global_text = env.global_textualize(state)
                for i in range(n):
                    request = render_actor(policy(i), observations[i],
                                           env.action_vocabulary(i))
                    assert global_text not in request.full_text


class TestCriticRender:
    def test_steps_in_order_with_joint_actions(self):
        request = render_critic(small_trajectory(), small_global_texts(), 0.35, 2)
        text = request.user_text
        assert text.index("Step 0:") < text.index("Step 1:") < text.index("Step 2:")
        assert "agent 0: down; agent 1: hold" in text
        assert request.tag == "critic"

    def test_contains_every_global_text(self):
        texts = small_global_texts()
        request = render_critic(small_trajectory(), texts, 0.35, 2)
        for t in texts:
            assert t in request.user_text

    def test_wrong_global_text_count_rejected(self):
        with pytest.raises(ValueError):
            render_critic(small_trajectory(), small_global_texts()[:-1], 0.35, 2)


def long_trajectory(horizon=500):
    steps = []
    for t in range(horizon):
        obs = (TextObservation(0, t, f"o{t}"),)
        acts = (Action(0, "hold"),)
        steps.append(Step(t, obs, acts, -0.1))
    return Trajectory(id="long", env_name="piston_line", seed=0,
                      steps=tuple(steps),
                      final_observations=(TextObservation(0, horizon, "f"),))


class TestTruncation:
    def test_short_trajectory_not_elided(self):
        text = serialize_trajectory(small_trajectory(), small_global_texts())
        assert "elided" not in text

    def test_budget_keeps_head_and_tail(self):
        traj = long_trajectory(500)
        texts = [f"g{t}" for t in range(501)]
        out = serialize_trajectory(traj, texts, step_budget=40)
        assert "Step 19:" in out
        assert "Step 480:" in out
        assert "Step 20:" not in out
        assert "Step 479:" not in out
        assert "[... 460 steps elided ...]" in out
        # the final state always survives elision
        assert "Final State: g500" in out

    def test_odd_budget_rounds_head_up(self):
        traj = long_trajectory(10)
        texts = [f"g{t}" for t in range(11)]
        out = serialize_trajectory(traj, texts, step_budget=5)
        assert "Step 2:" in out          # head keeps ceil(5/2) = 3 steps
        assert "Step 3:" not in out
        assert "Step 8:" in out          # tail keeps floor(5/2) = 2 steps
        assert "[... 5 steps elided ...]" in out


class TestGradientAndOptimizerRender:
    def credit(self, agent=0):
        return LanguageCredit(trajectory_id="t", agent=agent, text="credit words",
                              polarity=Polarity.MIXED)

    def test_agent_mismatch_rejected(self):
        with pytest.raises(ValueError):
            render_gradient(policy(0), self.credit(agent=1))

    def test_contains_policy_and_credit_verbatim(self):
        p = policy(0, piston_guard_policy(4))
        request = render_gradient(p, self.credit(0), "excerpt here")
        assert p.text in request.user_text
        assert "credit words" in request.user_text
        assert "excerpt here" in request.user_text
        assert request.tag == "grad"

    def test_empty_excerpt_omits_section(self):
        request = render_gradient(policy(0), self.credit(0), "")
        assert "Trajectory Excerpt" not in request.user_text

    def test_aggregator_singleton(self):
        g = LanguageGradient(trajectory_id="t", agent=0, text="gradient one")
        request = render_aggregator([g])
        assert request.user_text.count("Gradient 1:") == 1
        assert "Gradient 2:" not in request.user_text
        assert request.tag == "agg"

    def test_aggregator_rejects_mixed_agents(self):
        gradients = [LanguageGradient(trajectory_id="t", agent=a, text="x")
                     for a in (0, 1, 0, 1)]
        with pytest.raises(ValueError):
            render_aggregator(gradients)

    def test_aggregator_rejects_empty(self):
        with pytest.raises(ValueError):
            render_aggregator([])

    def test_optimizer_contains_prior_policy_verbatim(self):
        p = policy(2, piston_guard_policy(5))
        request = render_optimizer(p, "the synthesis")
        assert p.text in request.user_text
        assert "the synthesis" in request.user_text
        assert request.tag == "opt"


class TestTemplateMachinery:
    def test_unbound_placeholder_rejected(self):
        template = load_template("actor")
        with pytest.raises(ValueError, match="unbound"):
            render_template(template, {"agent_id": "1"})

    def test_all_templates_load_with_schema(self):
        for kind in ("actor", "critic", "reflection", "gradient",
                     "aggregator", "optimizer"):
            template = load_template(kind)
            assert template.output_schema
            assert template.system_text
