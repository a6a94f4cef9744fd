"""Exception hierarchy."""


class CosimError(Exception):
    """Base class for all errors raised by phicosim."""


class ConfigError(CosimError, ValueError):
    """Invalid configuration or violated precondition."""


class TimeRegression(CosimError):
    """A federate was asked to move backwards in time."""


class MissingInput(CosimError, KeyError):
    """A declared input port was not supplied."""

    def __str__(self):
        return Exception.__str__(self)


class CausalityError(CosimError):
    """A slave federate would have to be read in its past."""


class SingularTopology(ConfigError):
    """The nodal equations of a netlist cannot be solved."""


class UnsupportedElement(ConfigError):
    pass


class NonFinite(CosimError):
    """Simulation state became NaN or infinite."""

    def __init__(self, t: int, message: str = "non-finite state"):
        super().__init__(f"{message} at t={t} ns")
        self.t = t


class Diverged(CosimError):
    """A monitored signal exceeded its divergence limit.

    ``trace`` is filled in by the orchestrator with whatever was recorded
    before the run was aborted.
    """

    def __init__(self, t: int, signal: str, value: float):
        super().__init__(f"signal {signal!r} diverged at t={t} ns (value {value!r})")
        self.t = t
        self.signal = signal
        self.value = value
        self.trace = None


class PastEvent(CosimError):
    """An event was scheduled before the scheduler's current time."""


class DegenerateImpedance(CosimError, ValueError):
    pass


class InsufficientHistory(CosimError, ValueError):
    pass


class OverrunLimit(CosimError):
    """Too many real-time overruns under the abort policy."""

    def __init__(self, step: int, overruns: int):
        super().__init__(f"overrun limit exceeded at step {step} ({overruns} overruns)")
        self.step = step
        self.overruns = overruns


class DegenerateReference(CosimError, ValueError):
    """Reference signal has zero RMS."""


class ParseError(ConfigError):
    """Scenario file could not be parsed. Carries ``path``, ``line``, ``column``."""

    def __init__(self, message: str, path=None, line=None, column=None):
        loc = ""
        if path is not None:
            loc = f"{path}"
            if line is not None:
                loc += f":{line}"
                if column is not None:
                    loc += f":{column}"
            loc += ": "
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    """Aggregated scenario validation failures.

    ``errors`` is a list of ``(location, message)`` pairs, where location is
    a dotted key path.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{loc}: {msg}" if loc else msg for loc, msg in self.errors]
        super().__init__(f"{len(self.errors)} validation error(s):\n  " + "\n  ".join(lines))
