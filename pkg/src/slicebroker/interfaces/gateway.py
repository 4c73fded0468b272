"""Tenant-facing endpoints of the broker.

Operators (MVNOs, identified by PLMN-id) talk over the operator interface;
verticals and OTT providers (identified by a service id) come in through the
capability-exposure gateway. Both end up in the same :class:`BrokerGateway`,
which authenticates parties, enforces session scope and funnels requests
into the broker's single decision order.
"""

from __future__ import annotations

import itertools
import secrets
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple

from ..broker import Decision, SliceBroker
from ..domain import Bearer, TenantId, TenantKind, active_intervals
from ..errors import ProtocolError, RegistryError, SliceBrokerError
from . import wire
from .wire import ChargingRecord, Message, MessageType, UserContext

DEFAULT_MULTIPLIERS = {Bearer.GBR: 1.5, Bearer.NON_GBR: 1.0}


class Scope(str, Enum):
    OPERATOR = "OPERATOR"
    THIRD_PARTY = "THIRD_PARTY"


# message types a tenant may send, by session scope
ALLOWED = {
    Scope.OPERATOR: {MessageType.SLICE_REQ, MessageType.SLICE_RELEASE, MessageType.KPI_REPORT,
                     MessageType.CONTEXT_QUERY, MessageType.CHARGING_QUERY},
    Scope.THIRD_PARTY: {MessageType.SLICE_REQ, MessageType.SLICE_RELEASE,
                        MessageType.CONTEXT_QUERY, MessageType.CHARGING_QUERY},
}


@dataclass(frozen=True)
class Party:
    name: str
    secret: str
    tenant: TenantId


@dataclass(frozen=True)
class Session:
    session_id: str
    tenant: TenantId
    auth_token: str
    scope: Scope


class BrokerGateway:
    def __init__(self, broker: SliceBroker, parties: Iterable[Party] = (), telemetry=None, ran=None,
                 multipliers: Mapping = None,
                 on_decision: Callable[[Decision], None] = None):
        self.broker = broker
        self.parties: Dict[str, Party] = {p.name: p for p in parties}
        self.telemetry = telemetry
        self.ran = ran
        self.multipliers = dict(multipliers or DEFAULT_MULTIPLIERS)
        self.on_decision = on_decision
        self.sessions: Dict[str, Session] = {}
        self._ids = itertools.count(1)

    # -- operations --------------------------------------------------------

    def authenticate(self, party: str, secret: str) -> Session:
        p = self.parties.get(party)
        if p is None or not secrets.compare_digest(p.secret, secret):
            raise ProtocolError("AUTH_FAILED", "unknown party or bad secret")
        scope = Scope.OPERATOR if p.tenant.kind is TenantKind.OPERATOR else Scope.THIRD_PARTY
        session = Session(f"sess-{next(self._ids)}", p.tenant, secrets.token_hex(16), scope)
        self.sessions[session.session_id] = session
        return session

    def _own_slice(self, session: Session, slice_id: str):
        grant = self.broker.registry.grants.get(slice_id)
        # foreign slices look exactly like missing ones
        if grant is None or grant.tenant != session.tenant:
            raise RegistryError("UNKNOWN_SLICE", slice_id)
        return grant

    def submit_request(self, session: Session, req) -> Decision:
        if req.tenant != session.tenant:
            raise ProtocolError("TENANT_MISMATCH", f"session is {session.tenant}, request names {req.tenant}")
        decision = self.broker.submit(req)
        if self.on_decision is not None:
            self.on_decision(decision)
        return decision

    def release(self, session: Session, slice_id: str):
        self._own_slice(session, slice_id)
        return self.broker.release(slice_id)

    def query_user_context(self, session: Session, ue_filter: Optional[List[str]] = None) -> List[UserContext]:
        ues = self.ran.ues if self.ran is not None else {}
        if ue_filter is None:
            ids = sorted(u for u, ue in ues.items() if ue.tenant == session.tenant)
        else:
            ids = sorted(set(ue_filter))
            for u in ids:
                if u not in ues or ues[u].tenant != session.tenant:
                    raise ProtocolError("SCOPE_VIOLATION", f"UE {u} is not yours")
        return [UserContext(u, ues[u].serving_cell, ues[u].mobility,
                            self.ran.average_rate_mbps(u)) for u in ids]

    def fetch_charging(self, session: Session, slot_range: Tuple[int, int] = None) -> List[ChargingRecord]:
        """PRB-slot usage times the bearer tariff, per owned slice.

        A slice is listed when its admitted schedule touches the range, so a
        slice released before it started shows up with zero consumption.
        """
        reg = self.broker.registry
        lo, hi = slot_range if slot_range is not None else (0, self.broker.clock + 1)
        out = []
        for sid in sorted(reg.grants):
            g = reg.grants[sid]
            if g.tenant != session.tenant or hi <= lo:
                continue
            if not any(a < hi and b > lo for a, b in active_intervals(g.time, hi - 1)):
                continue
            used = sum(g.per_cell_prb.values()) * self.broker.charged_slots(sid, lo, hi)
            mult = self.multipliers[g.qos.bearer]
            out.append(ChargingRecord(sid, g.tenant, used, mult, used * mult))
        return out

    def tenant_report(self, session: Session, slot_range: Tuple[int, int] = None):
        self.telemetry.register_tenant(session.tenant)
        return self.telemetry.build_tenant_report(session.tenant, slot_range)

    # -- message dispatch --------------------------------------------------

    def connect(self) -> "Connection":
        return Connection(self)


def _error(seq: int, exc: Exception) -> Message:
    code = getattr(exc, "code", "INTERNAL")
    return Message(MessageType.ERROR, seq, {"code": code, "message": str(exc)})


def _range(body) -> Optional[Tuple[int, int]]:
    r = body.get("range")
    return None if r is None else (int(r[0]), int(r[1]))


class Connection:
    """One transport connection, which is one session once authenticated.

    Works on decoded messages (:meth:`handle`) or raw lines
    (:meth:`handle_line`); TCP and in-process loopback share this path.
    Responses echo the request's ``seq``.
    """

    def __init__(self, gateway: BrokerGateway):
        self.gateway = gateway
        self.session: Optional[Session] = None

    def handle_line(self, line: bytes) -> bytes:
        try:
            msg = wire.decode(line)
        except ProtocolError as exc:
            return wire.encode(_error(-1, exc))
        return wire.encode(self.handle(msg))

    def handle(self, msg: Message) -> Message:
        try:
            return self._dispatch(msg)
        except (SliceBrokerError, KeyError, TypeError, ValueError) as exc:
            if not isinstance(exc, SliceBrokerError):
                exc = ProtocolError("MALFORMED", repr(exc))
            return _error(msg.seq, exc)

    def _dispatch(self, msg: Message) -> Message:
        gw = self.gateway
        body = msg.body
        if msg.type is MessageType.AUTH_REQ:
            self.session = gw.authenticate(body["party"], body["secret"])
            s = self.session
            return Message(MessageType.AUTH_RESP, msg.seq, {
                "session_id": s.session_id, "tenant": wire.tenant_to_wire(s.tenant),
                "scope": s.scope.value, "token": s.auth_token})
        if self.session is None:
            raise ProtocolError("AUTH_REQUIRED", "authenticate first")
        if msg.type not in ALLOWED[self.session.scope]:
            raise ProtocolError("SCOPE_VIOLATION", f"{msg.type.value} not allowed for {self.session.scope.value}")

        if msg.type is MessageType.SLICE_REQ:
            req = wire.request_from_wire(body["request"])
            decision = gw.submit_request(self.session, req)
            return Message(MessageType.SLICE_DECISION, msg.seq, {"decision": wire.decision_to_wire(decision)})
        if msg.type is MessageType.SLICE_RELEASE:
            events, _ = gw.release(self.session, body["slice_id"])
            return Message(MessageType.SLICE_RELEASE, msg.seq, {
                "slice_id": body["slice_id"], "state": events[-1].state.value})
        if msg.type is MessageType.KPI_REPORT:
            report = gw.tenant_report(self.session, _range(body))
            return Message(MessageType.KPI_REPORT, msg.seq, {"report": wire.report_to_wire(report)})
        if msg.type is MessageType.CONTEXT_QUERY:
            ctx = gw.query_user_context(self.session, body.get("ue_ids"))
            return Message(MessageType.CONTEXT_RESP, msg.seq, {"contexts": [wire.context_to_wire(c) for c in ctx]})
        if msg.type is MessageType.CHARGING_QUERY:
            recs = gw.fetch_charging(self.session, _range(body))
            return Message(MessageType.CHARGING_RESP, msg.seq, {"records": [wire.charging_to_wire(r) for r in recs]})
        raise ProtocolError("SCOPE_VIOLATION", msg.type.value)
