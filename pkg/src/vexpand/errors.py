"""Exception and warning types shared across the package."""


class VexpandError(Exception):
    """Base class for numerical failures raised by this package."""


class DegenerateJacobian(VexpandError):
    pass


class RootFindFailure(VexpandError):
    pass


class TreeOverflow(VexpandError):
    pass


class GridBudgetExceeded(VexpandError):
    pass


class CertFailed(VexpandError):
    """A sub-inequality of the example certificate was violated.

    ``check`` names the violated inequality and ``witness`` holds the
    offending sample as a plain dict.
    """

    def __init__(self, check, witness):
        self.check = check
        self.witness = witness
        super().__init__(f"{check} violated at {witness}")


class EigenSolverFailure(VexpandError):
    pass


class NoUnitEigenvalue(VexpandError):
    pass


class BesselRangeError(VexpandError):
    pass


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 1)."""


class AliasingRisk(UserWarning):
    pass


class NonPositiveExponent(UserWarning):
    pass
