"""Exception hierarchy for the agent.

Every error carries a stable machine-readable ``code`` so the management
API and CLI can render it without string matching on messages.
"""

from __future__ import annotations


class ReprobeError(Exception):
    """Base class for all agent errors."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.__class__.__name__)
        self.message = message or self.__class__.__name__


# --- configuration validation -------------------------------------------

class InvalidConfig(ReprobeError):
    """An instance configuration failed validation.

    ``violations`` is the complete list of problems, never just the first.
    """

    code = "invalid_config"

    def __init__(self, violations):
        violations = list(violations)
        super().__init__("; ".join(str(v) for v in violations) or "invalid config")
        self.violations = violations


class ConfigParseError(ReprobeError):
    code = "config_parse_error"


# --- plugin registry ------------------------------------------------------

class UnknownPlugin(ReprobeError):
    code = "unknown_plugin"


class RegisterConflict(ReprobeError):
    code = "register_conflict"


class MalformedBundle(ReprobeError):
    code = "malformed_bundle"


class SchemaInvalid(ReprobeError):
    code = "schema_invalid"


class PluginInUse(ReprobeError):
    code = "plugin_in_use"


class BuiltinImmutable(ReprobeError):
    code = "builtin_immutable"


# --- instance lifecycle ---------------------------------------------------

class UnknownInstance(ReprobeError):
    code = "unknown_instance"


class IllegalState(ReprobeError):
    code = "illegal_state"


class AlreadyTerminal(ReprobeError):
    code = "already_terminal"


class SpawnFailed(ReprobeError):
    code = "spawn_failed"


class IllegalTransition(ReprobeError):
    """Internal guard: a state change not in the lifecycle transition table."""

    code = "illegal_transition"


# --- data bus -------------------------------------------------------------

class DuplicateSubscriber(ReprobeError):
    code = "duplicate_subscriber"


class InvalidCapacity(ReprobeError):
    code = "invalid_capacity"


class UnknownSubscription(ReprobeError):
    code = "unknown_subscription"


# --- collector runtime ----------------------------------------------------

class SamplerFailure(ReprobeError):
    code = "sampler_failure"


class InvalidCommand(ReprobeError):
    code = "invalid_command"


class UnsupportedIndicator(ReprobeError):
    code = "unsupported_indicator"


# --- analyzers ------------------------------------------------------------

class WindowTooShort(ReprobeError):
    code = "window_too_short"


class NonFiniteValue(ReprobeError):
    code = "non_finite_value"


# --- sinks ----------------------------------------------------------------

class SinkUnavailable(ReprobeError):
    code = "sink_unavailable"


# --- measurement ----------------------------------------------------------

class EmptyStream(ReprobeError):
    code = "empty_stream"


# --- daemon ---------------------------------------------------------------

class BindFailure(ReprobeError):
    code = "bind_failure"
