class DataError(ValueError):
    """Malformed or inconsistent input data (mesh, trajectory, config)."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values."""
