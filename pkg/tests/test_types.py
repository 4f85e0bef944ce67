import pytest

from textmarl.types import (
    Action,
    LanguagePolicy,
    PolicyRevision,
    RunConfig,
    Step,
    TextObservation,
    Trajectory,
)
from textmarl.errors import ConfigError


def make_step(t, n=2, reward=0.0):
    obs = tuple(TextObservation(i, t, f"obs {i}") for i in range(n))
    acts = tuple(Action(i, "hold") for i in range(n))
    return Step(t, obs, acts, reward)


class TestLanguagePolicy:
    def test_initial_and_update(self, counter_clock):
        policy = LanguagePolicy.initial(0, "first", counter_clock)
        assert policy.version == 0
        assert policy.history[0].text == "first"
        updated = policy.updated("second", counter_clock)
        assert updated.version == 1
        assert updated.text == "second"
        # the prior policy is untouched
        assert policy.version == 0
        assert policy.text == "first"

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            LanguagePolicy.initial(0, "")

    def test_history_append_only(self, counter_clock):
        policy = LanguagePolicy.initial(3, "v0", counter_clock)
        for k in range(1, 8):
            policy = policy.updated(f"v{k}", counter_clock)
        assert policy.version == 7
        for v, revision in enumerate(policy.history):
            assert revision.version == v
            assert revision.text == f"v{v}"

    def test_inconsistent_history_rejected(self):
        history = (PolicyRevision(0, "a", 1), PolicyRevision(2, "b", 2))
        with pytest.raises(ValueError):
            LanguagePolicy(agent=0, text="b", version=1, history=history)

    def test_version_must_track_history(self, counter_clock):
        policy = LanguagePolicy.initial(0, "a", counter_clock)
        with pytest.raises(ValueError):
            LanguagePolicy(agent=0, text="a", version=1, history=policy.history)


class TestStepAndTrajectory:
    def test_step_alignment_enforced(self):
        obs = (TextObservation(0, 0, "a"), TextObservation(1, 0, "b"))
        acts = (Action(1, "hold"), Action(0, "hold"))  # swapped agents
        with pytest.raises(ValueError):
            Step(0, obs, acts, 0.0)

    def test_length_mismatch_rejected(self):
        obs = (TextObservation(0, 0, "a"),)
        acts = (Action(0, "hold"), Action(1, "hold"))
        with pytest.raises(ValueError):
            Step(0, obs, acts, 0.0)

    def test_trajectory_requires_steps(self):
        with pytest.raises(ValueError):
            Trajectory(id="x", env_name="piston_line", seed=0, steps=(),
                       final_observations=())

    def test_trajectory_contiguous_indices(self):
        steps = (make_step(0), make_step(2))
        with pytest.raises(ValueError):
            Trajectory(id="x", env_name="piston_line", seed=0, steps=steps,
                       final_observations=(TextObservation(0, 2, "f"),
                                           TextObservation(1, 2, "f")))

    def test_final_observations_per_agent(self):
        steps = (make_step(0),)
        with pytest.raises(ValueError):
            Trajectory(id="x", env_name="piston_line", seed=0, steps=steps,
                       final_observations=(TextObservation(0, 1, "f"),))

    def test_valid_trajectory_properties(self):
        steps = tuple(make_step(t) for t in range(3))
        final = (TextObservation(0, 3, "f"), TextObservation(1, 3, "f"))
        traj = Trajectory(id="x", env_name="piston_line", seed=9, steps=steps,
                          final_observations=final)
        assert traj.n_agents == 2
        assert traj.horizon == 3


class TestRunConfig:
    def base(self, **kw):
        args = dict(n_agents=2, horizon=5, rollouts_per_iteration=2,
                    iterations=1, env_name="piston_line")
        args.update(kw)
        return RunConfig(**args)

    def test_valid(self):
        config = self.base()
        assert config.discount == 1.0

    @pytest.mark.parametrize("field,value", [
        ("n_agents", 0),
        ("horizon", 0),
        ("rollouts_per_iteration", 0),
        ("iterations", -1),
        ("discount", 1.5),
        ("discount", -0.1),
    ])
    def test_invalid_fields_named(self, field, value):
        with pytest.raises(ConfigError) as excinfo:
            self.base(**{field: value})
        assert field in str(excinfo.value)
