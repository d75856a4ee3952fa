"""Exception types."""


class MetricSpectraError(Exception):
    pass


class GraphFormatError(MetricSpectraError, ValueError):
    """Malformed graph file; ``line`` or ``field`` locate the problem."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.line = line
        self.field = field


class GraphValidationError(MetricSpectraError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UnderResolvedError(MetricSpectraError, RuntimeError):
    """Mesh too coarse for the requested eigenvalue index or kernel."""


class KernelError(MetricSpectraError, ValueError):
    pass
