"""Exception types shared across the package.

Every error carries a machine-readable ``code`` (e.g. ``UNKNOWN_CELL``) so it
can travel over the wire unchanged.
"""


class SliceBrokerError(Exception):
    code = "ERROR"

    def __init__(self, code=None, message="", field=None):
        if code is not None:
            self.code = code
        self.field = field
        text = self.code if not message else f"{self.code}: {message}"
        super().__init__(text)


class ValidationError(SliceBrokerError):
    """A request or config failed a schema/range check."""


class TopologyError(SliceBrokerError):
    """PLMN broadcast, attach or handover rule violated."""


class ClockError(SliceBrokerError):
    code = "CLOCK_SKEW"


class RegistryError(SliceBrokerError):
    """Unknown or already released slice."""


class TelemetryError(SliceBrokerError):
    pass


class ProtocolError(SliceBrokerError):
    """Malformed wire message, auth failure or scope violation."""


class ConfigError(SliceBrokerError):
    code = "CONFIG_INVALID"


class InvariantViolation(SliceBrokerError):
    code = "INVARIANT_VIOLATION"
