"""Exception types shared across the simulator."""


class EpdSimError(Exception):
    """Base class for all simulator errors."""


class NotationError(EpdSimError, ValueError):
    """Deployment notation failed to parse; carries the offending token."""

    def __init__(self, message: str, token: str = ""):
        super().__init__(message)
        self.token = token


class TraceParseError(EpdSimError, ValueError):
    """A trace file line failed validation; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int = 0):
        super().__init__(message)
        self.line_number = line_number


class CalibrationError(EpdSimError, ValueError):
    """Least-squares calibration was infeasible (e.g. underdetermined)."""


class RoutingError(EpdSimError, LookupError):
    """No instance can serve a required stage; carries the stage name."""

    def __init__(self, message: str, stage: str = ""):
        super().__init__(message)
        self.stage = stage


class ConfigError(EpdSimError, ValueError):
    """Run configuration is invalid; collects one or more diagnostics."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class MetricError(EpdSimError, ValueError):
    """A metric was requested for a record where it is undefined."""
