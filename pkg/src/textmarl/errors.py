"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TextmarlError(Exception):
    """Base class for all package errors."""


# --- environment ---

class EnvError(TextmarlError):
    """Environment construction or transition failure."""


class UnknownEnvError(EnvError):
    """Requested environment name is not registered."""


class ActionError(EnvError):
    """A joint action contained a name outside an agent's vocabulary."""

    def __init__(self, agent: int, action: str):
        self.agent = agent
        self.action = action
        super().__init__(f"agent {agent}: action {action!r} not in vocabulary")


# --- persistence ---

class TrajectoryStoreError(TextmarlError):
    """Trajectory file is malformed; message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# --- backend ---

class BackendError(TextmarlError):
    """Base class for chat-backend failures."""


class TransportError(BackendError):
    """Network-level failure that persisted through all retry attempts."""


class AuthError(BackendError):
    """Missing or rejected credentials (401/403). Never retried."""


class RateLimited(BackendError):
    """HTTP 429 persisted through all retry attempts."""


class TimeoutError(BackendError):  # noqa: A001 - mirrors the contract name
    """Request exceeded the configured timeout."""


class UnknownScriptError(BackendError):
    """Scripted backend was asked for a script it does not define."""


class UnhandledTagError(BackendError):
    """Scripted backend received a request whose tag no rule table covers."""


# --- parsing ---

class ParseError(TextmarlError):
    """Base class for structured-output parsing failures."""


class NoActionLine(ParseError):
    """Actor completion contained no 'Action:' line."""


class UnknownAction(ParseError):
    """Actor completion had an 'Action:' line matching no vocabulary item."""


class ZeroSections(ParseError):
    """Critic completion contained no credit-assignment header at all."""


class MissingSection(ParseError):
    """A labeled output section required by the template is absent."""


# --- rollout / learning ---

class EpisodeError(TextmarlError):
    """An episode aborted; carries the partial trajectory for debugging."""

    def __init__(self, message: str, partial_steps=None):
        self.partial_steps = partial_steps or []
        super().__init__(message)


class BatchError(TextmarlError):
    """A rollout batch failed fast; carries the completed trajectories."""

    def __init__(self, message: str, completed=None):
        self.completed = completed or []
        super().__init__(message)


class CreditFailure(TextmarlError):
    """Critic produced no parseable credit sections after a re-prompt."""


class GradientFailure(TextmarlError):
    """Gradient estimator produced no gradient section after a re-prompt."""


class UpdateFailure(TextmarlError):
    """Optimizer produced no updated-policy section after a re-prompt."""


class TrainError(TextmarlError):
    """A training iteration failed; carries the iteration index."""

    def __init__(self, iteration: int, cause: Exception):
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"iteration {iteration}: {cause}")


# --- configuration ---

class ConfigError(TextmarlError):
    """Run configuration failed validation; message names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
