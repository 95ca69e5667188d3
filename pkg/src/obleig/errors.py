"""Exception types shared by all modules.

Every error carries a short machine name (the class name) which the CLI
copies into JSON reports.
"""


class ObleigError(Exception):
    """Base class for all library errors."""


class ConfigError(ObleigError):
    """Malformed scenario, domain or operator configuration."""


class ExpressionError(ConfigError):
    """Expression string does not follow the grammar."""


class SchemaMismatch(ObleigError):
    """Artifact does not have the columns a consumer expects."""


class SeedOutsideDomain(ObleigError):
    pass


class EmptyTruncation(ObleigError):
    pass


class InvalidMass(ObleigError):
    pass


class EllipticityViolation(ObleigError):
    pass


class ObliquenessViolation(ObleigError):
    pass


class DimensionMismatch(ObleigError):
    pass


class KTooSmall(ObleigError):
    pass


class NoConvergence(ObleigError):
    pass


class PositivityLoss(ObleigError):
    pass


class ZeroVector(ObleigError):
    pass


class UndifferentiableField(ObleigError):
    pass


class SampleTooCoarse(ObleigError):
    pass


class ResolventSingular(ObleigError):
    pass


class MismatchedScenario(ObleigError):
    pass


class BlowUp(ObleigError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NoFront(ObleigError):
    pass
