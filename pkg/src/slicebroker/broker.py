"""Slice broker core: admission control, slice registry and lifecycle.

The broker is a serialized decision engine. Every admit, release and tick
goes through one :class:`SliceBroker` instance in a single total order and is
appended to its decision log, which is enough to rebuild the registry.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

from .domain import (DEFAULT_EFFICIENCY, SchedulingMode, SliceGrant, SliceTemplate,
                     ValidatedRequest, active_intervals, needed_prb, validate_request)
from .errors import (ClockError, InvariantViolation, RegistryError, SliceBrokerError,
                     ValidationError)
from .ransim import ActiveGrant

DEFAULT_HORIZON_DAYS = 7


class SliceState(str, Enum):
    PENDING = "PENDING"
    ACTIVE = "ACTIVE"
    DORMANT = "DORMANT"
    EXPIRED = "EXPIRED"
    RELEASED = "RELEASED"


_EDGES = {
    SliceState.PENDING: {SliceState.ACTIVE},
    SliceState.ACTIVE: {SliceState.DORMANT, SliceState.EXPIRED},
    SliceState.DORMANT: {SliceState.ACTIVE, SliceState.EXPIRED},
    SliceState.EXPIRED: set(),
    SliceState.RELEASED: set(),
}


class Outcome(str, Enum):
    GRANTED = "GRANTED"
    REJECTED = "REJECTED"


class RejectReason(str, Enum):
    CAPACITY_EXCEEDED = "CAPACITY_EXCEEDED"
    NO_FEASIBLE_CELLS = "NO_FEASIBLE_CELLS"
    VALIDATION_FAILED = "VALIDATION_FAILED"
    HORIZON_EXCEEDED = "HORIZON_EXCEEDED"


@dataclass(frozen=True)
class Decision:
    request_id: str
    outcome: Outcome
    grant: Optional[SliceGrant] = None
    reason: Optional[RejectReason] = None
    detail: str = ""

    @property
    def granted(self) -> bool:
        return self.outcome is Outcome.GRANTED

    @classmethod
    def reject(cls, request_id, reason, detail=""):
        return cls(request_id, Outcome.REJECTED, None, RejectReason(reason), detail)


class LifecycleKind(str, Enum):
    ACTIVATE = "ACTIVATE"
    DEACTIVATE = "DEACTIVATE"
    RELEASE = "RELEASE"


@dataclass(frozen=True)
class LifecycleEvent:
    slot: int
    slice_id: str
    kind: LifecycleKind
    state: SliceState


class ConfigAction(str, Enum):
    ACTIVATE = "ACTIVATE"
    DEACTIVATE = "DEACTIVATE"


@dataclass(frozen=True)
class ConfigPush:
    """Instruction to (de)configure a slice on its cells; see ``interfaces.southbound``."""
    slot: int
    action: ConfigAction
    grant: SliceGrant


class LogOp(str, Enum):
    ADMIT = "ADMIT"
    RELEASE = "RELEASE"
    RENEW = "RENEW"
    RENEW_FAILED = "RENEW_FAILED"
    CLOCK = "CLOCK"


@dataclass(frozen=True)
class LogEntry:
    """One decision-log record. ``clock`` is the broker clock when it happened."""
    seq: int
    clock: int
    op: LogOp
    request: Optional[ValidatedRequest] = None
    decision: Optional[Decision] = None
    slice_id: Optional[str] = None
    intervals: Tuple[Tuple[int, int], ...] = ()


@dataclass
class SliceRegistry:
    grants: Dict[str, SliceGrant] = field(default_factory=dict)
    state: Dict[str, SliceState] = field(default_factory=dict)
    intervals: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)
    committed: Dict[Tuple[str, int], int] = field(default_factory=dict)
    arrival: Dict[str, int] = field(default_factory=dict)
    renewal_stopped: set = field(default_factory=set)
    request_ids: set = field(default_factory=set)
    clock: int = -1

    def set_state(self, slice_id: str, new: SliceState):
        old = self.state[slice_id]
        if new is not SliceState.RELEASED and new not in _EDGES[old]:
            raise InvariantViolation(message=f"{slice_id}: illegal transition {old.value}->{new.value}")
        if new is SliceState.RELEASED and old is SliceState.RELEASED:
            raise InvariantViolation(message=f"{slice_id}: released twice")
        self.state[slice_id] = new

    def commit(self, slice_id: str, interval: Tuple[int, int]):
        grant = self.grants[slice_id]
        a, b = interval
        for cell, prb in grant.per_cell_prb.items():
            for t in range(a, b):
                self.committed[(cell, t)] = self.committed.get((cell, t), 0) + prb
        self.intervals[slice_id].append((a, b))

    def uncommit_from(self, slice_id: str, slot: int):
        """Drop the slice's reservations at ``slot`` and later."""
        grant = self.grants[slice_id]
        kept = []
        for a, b in self.intervals[slice_id]:
            lo = max(a, slot)
            for cell, prb in grant.per_cell_prb.items():
                for t in range(lo, b):
                    left = self.committed[(cell, t)] - prb
                    if left:
                        self.committed[(cell, t)] = left
                    else:
                        del self.committed[(cell, t)]
            if a < slot:
                kept.append((a, min(b, slot)))
        self.intervals[slice_id] = kept

    def load(self, cell: str, slot: int) -> int:
        return self.committed.get((cell, slot), 0)

    def check_capacity(self, capacities: Mapping[str, int]):
        for (cell, t), load in self.committed.items():
            if load > capacities[cell]:
                raise InvariantViolation(message=f"committed {load} > {capacities[cell]} at {cell}/{t}")

    def covering(self, slice_id: str, slot: int) -> bool:
        """Whether one of the slice's intervals (kept sorted) covers ``slot``."""
        ivs = self.intervals[slice_id]
        i = bisect.bisect_right(ivs, (slot, math.inf)) - 1
        return i >= 0 and slot < ivs[i][1]

    def active_at(self, slot: int) -> List[str]:
        return [sid for sid in sorted(self.grants, key=self.arrival.get)
                if self.state[sid] is not SliceState.RELEASED and self.covering(sid, slot)]

    def snapshot(self) -> dict:
        """Plain-data view used for comparison and persistence."""
        return {
            "clock": self.clock,
            "slices": {
                sid: {
                    "state": self.state[sid].value,
                    "arrival": self.arrival[sid],
                    "request_id": g.request_id,
                    "tenant": str(g.tenant),
                    "per_cell_prb": dict(sorted(g.per_cell_prb.items())),
                    "intervals": [list(iv) for iv in self.intervals[sid]],
                    "renewal_stopped": sid in self.renewal_stopped,
                }
                for sid, g in sorted(self.grants.items())
            },
            "committed": [[c, t, v] for (c, t), v in sorted(self.committed.items())],
        }


def determine_cells(req: ValidatedRequest, topology, ue_locations: Mapping[str, tuple]) -> List[str]:
    """Cells that must carry the slice.

    An explicit cell list passes through untouched. Otherwise the cells now
    serving the tenant's UEs are used; a massive-IoT slice with no UEs yet
    covers every cell. ``ue_locations`` maps ue id to ``(tenant, cell)``.
    """
    if req.cells is not None:
        return list(req.cells)
    cells = sorted({cell for tenant, cell in ue_locations.values()
                    if tenant == req.tenant and cell is not None})
    if not cells and req.template is SliceTemplate.MIOT:
        cells = sorted(topology.cells)
    if not cells:
        raise SliceBrokerError(RejectReason.NO_FEASIBLE_CELLS.value,
                               f"no UEs of {req.tenant} are attached")
    return cells


def first_overload(registry: SliceRegistry, cells: Sequence[str], intervals, need: int,
                   capacities: Mapping[str, int], forecaster) -> Optional[Tuple[str, int]]:
    """First (cell, slot) where adding ``need`` PRBs would exceed capacity."""
    for cell in cells:
        cap = capacities[cell]
        for a, b in intervals:
            for t in range(a, b):
                bg = math.ceil(forecaster(cell, t)) if forecaster else 0
                if registry.load(cell, t) + bg + need > cap:
                    return cell, t
    return None


class SliceBroker:
    """First-come-first-served admission over a rolling commitment horizon."""

    def __init__(self, topology, forecaster: Callable[[str, int], float] = None,
                 horizon_slots: int = DEFAULT_HORIZON_DAYS * 86400,
                 mode: SchedulingMode = SchedulingMode.TWO_LAYER,
                 efficiency_table: Mapping = None,
                 ue_locations: Callable[[], Mapping] = None):
        self.topology = topology
        self.forecaster = forecaster
        self.horizon_slots = horizon_slots
        self.mode = SchedulingMode(mode)
        self.efficiency = dict(efficiency_table or DEFAULT_EFFICIENCY)
        self.ue_locations = ue_locations or (lambda: {})
        self.registry = SliceRegistry()
        self.log: List[LogEntry] = []
        self.lifecycle: List[LifecycleEvent] = []
        self._next_slice = 0
        self._outbox_events: List[LifecycleEvent] = []
        self._outbox_pushes: List[ConfigPush] = []
        self._cursor: Dict[str, int] = {}

    @property
    def clock(self) -> int:
        return self.registry.clock

    @property
    def horizon_end(self) -> int:
        """First slot past the materialized horizon."""
        return self.clock + 1 + self.horizon_slots

    @property
    def capacities(self) -> Dict[str, int]:
        return {c: m.capacity_prb_per_slot for c, m in self.topology.cells.items()}

    def _append(self, op, **kw) -> LogEntry:
        entry = LogEntry(seq=len(self.log), clock=self.clock, op=op, **kw)
        self.log.append(entry)
        return entry

    def submit(self, req) -> Decision:
        """Validate and admit. Validation errors become REJECTED decisions."""
        try:
            vreq = validate_request(req, self.topology)
        except ValidationError as exc:
            decision = Decision.reject(req.request_id, RejectReason.VALIDATION_FAILED, str(exc))
            self._append(LogOp.ADMIT, request=None, decision=decision)
            return decision
        return self.admit(vreq)

    def _plan(self, req: ValidatedRequest):
        t = req.time
        if t.start_slot <= self.clock:
            return None, Decision.reject(req.request_id, RejectReason.VALIDATION_FAILED,
                                         f"start {t.start_slot} is not after clock {self.clock}")
        last_start = self.horizon_end - 1
        if t.open_ended:
            intervals = active_intervals(t, last_start)
            if not intervals:
                return None, Decision.reject(req.request_id, RejectReason.HORIZON_EXCEEDED,
                                             f"start {t.start_slot} beyond horizon {self.horizon_end}")
            return intervals, None
        full = active_intervals(t, t.window_end_slot if t.window_end_slot is not None else t.start_slot)
        if full[-1][1] > self.horizon_end:
            return None, Decision.reject(req.request_id, RejectReason.HORIZON_EXCEEDED,
                                         f"interval ends at {full[-1][1]}, horizon ends at {self.horizon_end}")
        return full, None

    def admit(self, req: ValidatedRequest) -> Decision:
        """Grant iff every (cell, slot) of every active interval has room for
        committed load + forecast background + the request."""
        decision, intervals = self._decide(req)
        if decision.granted:
            g = decision.grant
            reg = self.registry
            reg.grants[g.slice_id] = g
            reg.state[g.slice_id] = SliceState.PENDING
            reg.intervals[g.slice_id] = []
            reg.arrival[g.slice_id] = len(reg.arrival)
            for iv in intervals:
                reg.commit(g.slice_id, iv)
            reg.request_ids.add(req.request_id)
        self._append(LogOp.ADMIT, request=req, decision=decision,
                     slice_id=decision.grant.slice_id if decision.granted else None,
                     intervals=tuple(intervals) if decision.granted else ())
        return decision

    def _decide(self, req: ValidatedRequest):
        if req.request_id in self.registry.request_ids:
            return Decision.reject(req.request_id, RejectReason.VALIDATION_FAILED,
                                   "duplicate request_id"), []
        intervals, rejection = self._plan(req)
        if rejection is not None:
            return rejection, []
        try:
            cells = determine_cells(req, self.topology, self.ue_locations())
        except SliceBrokerError as exc:
            return Decision.reject(req.request_id, RejectReason.NO_FEASIBLE_CELLS, str(exc)), []
        need = needed_prb(req, self.efficiency)
        hit = first_overload(self.registry, cells, intervals, need, self.capacities, self.forecaster)
        if hit is not None:
            return Decision.reject(req.request_id, RejectReason.CAPACITY_EXCEEDED,
                                   f"cell {hit[0]} slot {hit[1]}"), []
        slice_id = f"S{self._next_slice:04d}"
        self._next_slice += 1
        grant = SliceGrant(slice_id=slice_id, request_id=req.request_id, tenant=req.tenant,
                           per_cell_prb={c: need for c in cells}, time=req.time, qos=req.qos,
                           mode=self.mode)
        return Decision(req.request_id, Outcome.GRANTED, grant), intervals

    def release(self, slice_id: str):
        """Free the slice's future reservations; past usage stays billable."""
        reg = self.registry
        if slice_id not in reg.grants:
            raise RegistryError("UNKNOWN_SLICE", slice_id)
        if reg.state[slice_id] is SliceState.RELEASED:
            raise RegistryError("ALREADY_RELEASED", slice_id)
        was_active = reg.state[slice_id] is SliceState.ACTIVE
        reg.uncommit_from(slice_id, self.clock + 1)
        reg.set_state(slice_id, SliceState.RELEASED)
        self._append(LogOp.RELEASE, slice_id=slice_id)
        event = LifecycleEvent(self.clock + 1, slice_id, LifecycleKind.RELEASE, SliceState.RELEASED)
        self.lifecycle.append(event)
        pushes = [ConfigPush(event.slot, ConfigAction.DEACTIVATE, reg.grants[slice_id])] if was_active else []
        # reported again by the next tick so the RAN side hears about it
        self._outbox_events.append(event)
        self._outbox_pushes.extend(pushes)
        return [event], pushes

    def _renew(self):
        """Materialize recurrences of open-ended periodic slices up to the horizon."""
        reg = self.registry
        for sid in sorted(reg.grants, key=reg.arrival.get):
            g = reg.grants[sid]
            if (not g.time.open_ended or sid in reg.renewal_stopped
                    or reg.state[sid] in (SliceState.RELEASED, SliceState.EXPIRED)):
                continue
            last = reg.intervals[sid][-1][0] if reg.intervals[sid] else g.time.start_slot - g.time.periodicity_slots
            nxt = last + g.time.periodicity_slots
            while nxt < self.horizon_end:
                iv = (nxt, nxt + g.time.duration_slots)
                hit = first_overload(reg, g.cells, [iv], 0, self._headroom(g), self.forecaster)
                if hit is not None:
                    reg.renewal_stopped.add(sid)
                    self._append(LogOp.RENEW_FAILED, slice_id=sid, intervals=(iv,))
                    break
                reg.commit(sid, iv)
                self._append(LogOp.RENEW, slice_id=sid, intervals=(iv,))
                nxt += g.time.periodicity_slots

    def _headroom(self, grant: SliceGrant) -> Dict[str, int]:
        caps = self.capacities
        return {c: caps[c] - grant.per_cell_prb[c] for c in grant.per_cell_prb}

    def _has_future(self, sid: str, after: int) -> bool:
        reg = self.registry
        ivs = reg.intervals[sid]
        if ivs and ivs[-1][0] >= after:
            return True
        return reg.grants[sid].time.open_ended and sid not in reg.renewal_stopped

    def tick(self, slot: int, renew: bool = True):
        """Advance the clock, emitting lifecycle events and config pushes.

        Boundaries skipped by a clock jump are still emitted, each with its
        own slot.
        """
        reg = self.registry
        if slot <= reg.clock:
            raise ClockError(message=f"tick {slot} after {reg.clock}")
        prev = reg.clock
        reg.clock = slot
        if renew:
            self._renew()
        events: List[LifecycleEvent] = []
        released, self._outbox_events = self._outbox_events, []
        release_pushes, self._outbox_pushes = self._outbox_pushes, []
        for sid in sorted(reg.grants, key=reg.arrival.get):
            if reg.state[sid] in (SliceState.RELEASED, SliceState.EXPIRED):
                continue
            # intervals ending at or before ``prev`` were handled by earlier ticks
            ivs = reg.intervals[sid]
            i = self._cursor.get(sid, 0)
            while i < len(ivs) and ivs[i][1] <= prev:
                i += 1
            self._cursor[sid] = i
            marks = []
            for a, b in ivs[i:]:
                if a > slot:
                    break
                if b <= slot:
                    marks.append((b, 0))
                if prev < a:
                    marks.append((a, 1))
            for at, kind in sorted(marks):
                if kind == 1:
                    reg.set_state(sid, SliceState.ACTIVE)
                    events.append(LifecycleEvent(at, sid, LifecycleKind.ACTIVATE, SliceState.ACTIVE))
                else:
                    new = SliceState.DORMANT if self._has_future(sid, at) else SliceState.EXPIRED
                    reg.set_state(sid, new)
                    events.append(LifecycleEvent(at, sid, LifecycleKind.DEACTIVATE, new))
        events.sort(key=lambda e: (e.slot, reg.arrival[e.slice_id], e.kind != LifecycleKind.DEACTIVATE))
        pushes = [
            ConfigPush(e.slot, ConfigAction(e.kind.value), reg.grants[e.slice_id]) for e in events
        ]
        self.lifecycle.extend(events)
        return released + events, release_pushes + pushes

    def active_grants(self, slot: int) -> List[ActiveGrant]:
        reg = self.registry
        return [ActiveGrant(reg.grants[sid], reg.arrival[sid]) for sid in reg.active_at(slot)]

    def close(self):
        """Mark the end of the log so replay lands on the same clock."""
        self._append(LogOp.CLOCK)

    def charged_slots(self, slice_id: str, lo: int, hi: int) -> int:
        """Elapsed slots in ``[lo, hi)`` during which the slice was active."""
        hi = min(hi, self.clock + 1)
        return sum(max(0, min(b, hi) - max(a, lo)) for a, b in self.registry.intervals[slice_id])


def replay(entries: Sequence[LogEntry], topology=None, horizon_slots: int = DEFAULT_HORIZON_DAYS * 86400,
           mode: SchedulingMode = SchedulingMode.TWO_LAYER) -> SliceBroker:
    """Rebuild a broker from its decision log without re-running admission."""
    broker = SliceBroker(topology, horizon_slots=horizon_slots, mode=mode)
    reg = broker.registry

    def advance(to):
        if to > reg.clock:
            broker.tick(to, renew=False)

    for e in entries:
        if e.op is LogOp.ADMIT:
            advance(e.clock)
            if e.decision is not None and e.decision.granted:
                g = e.decision.grant
                reg.grants[g.slice_id] = g
                reg.state[g.slice_id] = SliceState.PENDING
                reg.intervals[g.slice_id] = []
                reg.arrival[g.slice_id] = len(reg.arrival)
                for iv in e.intervals:
                    reg.commit(g.slice_id, tuple(iv))
                reg.request_ids.add(g.request_id)
                broker._next_slice += 1
            broker.log.append(e)
        elif e.op is LogOp.RELEASE:
            advance(e.clock)
            broker.release(e.slice_id)
        elif e.op in (LogOp.RENEW, LogOp.RENEW_FAILED):
            # renewals happen at the start of tick ``e.clock``
            advance(e.clock - 1)
            if e.op is LogOp.RENEW:
                reg.commit(e.slice_id, tuple(e.intervals[0]))
            else:
                reg.renewal_stopped.add(e.slice_id)
            broker.log.append(e)
        elif e.op is LogOp.CLOCK:
            advance(e.clock)
            broker.log.append(e)
    return broker
