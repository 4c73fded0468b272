"""Network slice broker with a shared-RAN simulator."""

from .broker import Decision, SliceBroker, SliceState
from .domain import (QosProfile, ResourceSpec, ServiceInfo, SliceGrant, SliceRequest,
                     TenantId, TimeSpec, validate_request)
from .errors import SliceBrokerError
from .ransim import SharedRan, Topology
from .runner import World
from .scenario import load_config

__version__ = "0.1.0"

__all__ = [
    "Decision", "QosProfile", "ResourceSpec", "ServiceInfo", "SharedRan", "SliceBroker",
    "SliceBrokerError", "SliceGrant", "SliceRequest", "SliceState", "TenantId", "TimeSpec",
    "Topology", "World", "load_config", "validate_request",
]
