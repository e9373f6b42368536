"""Exception hierarchy for cvpbench."""


class CVPError(Exception):
    """Base class for all errors raised by cvpbench."""


class DimensionMismatchError(CVPError, ValueError):
    """Point dimension does not match the kernel or measure dimension."""


class ScenarioError(CVPError, ValueError):
    """Unknown scenario name or invalid scenario parameters."""


class ConfigError(CVPError, ValueError):
    """Configuration file cannot be parsed or contains an invalid key.

    Parameters
    ----------
    message : str
        Human readable description.
    key : str, optional
        Dotted path of the offending key.
    """

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{message} (key: {key})"
        super().__init__(message)


class SingularMetricError(CVPError, ArithmeticError):
    """Jet metric block is singular or not positive definite at a support point."""


class DegenerateBasisError(CVPError, ArithmeticError):
    """Test jet basis is linearly dependent or violates the scalar nontriviality condition."""


class ShieldingNotObservedError(CVPError, RuntimeError):
    """Nested strip solutions did not stabilize.

    Attributes
    ----------
    log : list of dict
        Per-strip stabilization deltas.
    """

    def __init__(self, message, log=None):
        self.log = list(log or [])
        super().__init__(message)


class DeltaContainmentError(CVPError, ValueError):
    """Inner strip is not Delta-contained in the outer strip."""


class DegenerateSymplecticError(CVPError, ArithmeticError):
    """Symplectic data vanishes (everything lies in the radical)."""


class IndefiniteFormError(CVPError, ArithmeticError):
    """Surface-layer inner product is indefinite on the solution span.

    Attributes
    ----------
    spectrum : numpy.ndarray
        Eigenvalues of the offending form.
    """

    def __init__(self, message, spectrum=None):
        self.spectrum = spectrum
        super().__init__(message)


class DegreeOverflowError(CVPError, ValueError):
    """Polynomial product would exceed the truncation degree."""


class HypothesisNotMetError(CVPError, RuntimeError):
    """A dynamics stage was requested on a scenario that failed hyperbolicity."""


class StageFailure(CVPError, RuntimeError):
    """A pipeline stage failed its residual checks."""

    def __init__(self, stage, report):
        self.stage = stage
        self.report = report
        super().__init__(f"stage '{stage}' failed")
