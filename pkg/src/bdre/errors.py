"""Error types mapped to distinct CLI exit codes."""


class StabilityError(RuntimeError):
    """Evaluation refused: outside the numerically stable parameter range."""


class AccuracyError(RuntimeError):
    """Quadrature could not meet its accuracy budget."""
