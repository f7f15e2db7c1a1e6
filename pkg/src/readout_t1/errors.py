class ReadoutT1Error(Exception):
    """Base class for errors raised by readout_t1."""


class ConfigError(ReadoutT1Error, ValueError):
    """Invalid or malformed configuration input.

    ``problems`` lists ``(field, message)`` pairs so the CLI can report
    every offending field at once.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [("", problems)]
        self.problems = list(problems)
        super().__init__(
            "; ".join(f"{f}: {m}" if f else m for f, m in self.problems)
        )


class LevelingError(ReadoutT1Error, ValueError):
    """A drive amplitude cannot be chosen to hit the requested target."""


class FitError(ReadoutT1Error, RuntimeError):
    """A least-squares fit failed; ``diagnostics`` holds best-so-far state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InsufficientDecayError(FitError):
    """The trace decays too little for a rate to be resolved."""


class SimulationError(ReadoutT1Error, RuntimeError):
    """The master-equation integration violated one of its health checks."""
