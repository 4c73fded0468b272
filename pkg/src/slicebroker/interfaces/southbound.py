"""Slice configuration toward the shared RAN.

One grant-level Itf-N message goes to the shared-RAN domain manager, which
fans out one Itf-B message per cell. Every message names the tenant so the
cell can tag the slice's traffic and measurements with it.
"""

from __future__ import annotations

from typing import List

from ..broker import ConfigAction, ConfigPush
from ..domain import SliceGrant
from .wire import Message, MessageType, tenant_to_wire


def push_config(grant: SliceGrant, action: ConfigAction, slot: int = 0, seq: int = 0) -> List[Message]:
    action = ConfigAction(action)
    tenant = tenant_to_wire(grant.tenant)
    msgs = [Message(MessageType.CONFIG_ITFN, seq, {
        "slice_id": grant.slice_id,
        "tenant": tenant,
        "action": action.value,
        "cells": grant.cells,
        "per_cell_prb": dict(grant.per_cell_prb),
        "mode": grant.mode.value,
        "slot": slot,
    })]
    for i, cell in enumerate(grant.cells, start=1):
        msgs.append(Message(MessageType.CONFIG_ITFB, seq + i, {
            "cell_id": cell,
            "slice_id": grant.slice_id,
            "tenant": tenant,
            "action": action.value,
            "prb": grant.per_cell_prb[cell],
            "mode": grant.mode.value,
            "slot": slot,
        }))
    return msgs


def render(pushes: List[ConfigPush], seq: int = 0) -> List[Message]:
    """Expand broker config pushes into wire messages with consecutive seqs."""
    out = []
    for p in pushes:
        msgs = push_config(p.grant, p.action, p.slot, seq)
        seq += len(msgs)
        out.extend(msgs)
    return out
