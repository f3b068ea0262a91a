"""
Exception hierarchy shared by every module.
Each error carries a short machine-readable reason used in summary.json.
"""
from typing import Optional


class GeoTransportError(Exception):
    """Base class for all library errors"""

    reason = "error"

    def __init__(self, message: str, reason: Optional[str] = None):
        super().__init__(message)
        if reason is not None:
            self.reason = reason


class ConfigError(GeoTransportError):
    """Invalid configuration, scenario file or parameter (CLI exit 2)"""

    reason = "config_error"


class ExprSyntaxError(ConfigError):
    """Malformed field expression"""

    reason = "expr_syntax"

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownIdentifierError(ConfigError):
    """Identifier outside the expression grammar"""

    reason = "unknown_identifier"

    def __init__(self, name: str, position: int):
        super().__init__(f"Unknown identifier '{name}' at position {position}")
        self.name = name
        self.position = position


class CFLError(ConfigError):
    """Time step violates the advection stability bound"""

    reason = "cfl_violation"


class DimensionError(GeoTransportError):
    """Operands live in incompatible dimensions"""

    reason = "dimension_mismatch"


class FieldDomainError(GeoTransportError):
    """Query outside the box of a non-periodic grid field"""

    reason = "out_of_domain"


class IntegrationError(GeoTransportError):
    """Flow integration failed: step budget exceeded or non-finite state (CLI exit 3)"""

    reason = "integration_failed"


class InstabilityError(GeoTransportError):
    """Eulerian solver produced non-finite samples (CLI exit 3)"""

    reason = "instability"

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class PreconditionError(GeoTransportError):
    """A documented precondition does not hold for the given input"""

    reason = "precondition_failed"
