"""Exception hierarchy shared by every certgate module."""

from __future__ import annotations


class CertgateError(Exception):
    """Base class for all certgate errors."""


class ParseError(CertgateError):
    """Input bytes are not well-formed (bad UTF-8, bad JSON, wrong shape)."""


class ValidationError(CertgateError):
    """A structural invariant does not hold. ``field`` names the offender."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class OutOfRange(CertgateError):
    pass


class SpecError(CertgateError):
    """A policy layer is malformed in a way only discovered while evaluating."""


class DuplicateLayerId(CertgateError):
    pass


class NondeterministicMonitor(ValidationError):
    def __init__(self, layer_id: str, state: str, first: int, second: int) -> None:
        super().__init__(
            f"layers[{layer_id}].spec.transitions",
            f"transitions {first} and {second} from state {state!r} overlap",
        )
        self.layer_id = layer_id
        self.state = state
        self.pair = (first, second)


class PolicyVersionMismatch(CertgateError):
    pass


class MemoryUnavailable(CertgateError):
    """An M3 certifier was invoked without a ledger handle."""


class CapabilityDenied(CertgateError):
    """The caller's memory class does not cover the requested fact family."""


class UnknownFact(CertgateError):
    pass


class TimeRegression(CertgateError):
    pass


class TraceNotFound(CertgateError):
    pass


class NoCertificate(CertgateError):
    """Execution was requested without a valid certificate."""


class StaleCertificate(CertgateError):
    pass


class TraceMismatch(CertgateError):
    pass


class UniverseTooLarge(CertgateError):
    pass


class UnknownScenario(CertgateError):
    pass
