"""Power-allocation policies sharing one interface.

A policy maps (slot, phase, residuals, current SNRs) to a transmit power.
``power_batch`` works on arrays for the simulator; ``power`` takes a single
``SystemState``. A power of ``inf`` marks a slot the policy cannot serve.
In phase 2 the returned power is sent by the node with the stronger link to
the destination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError
from .info import Phase, SystemState


class PolicyKind(str, Enum):
    DP_TABLE = "dp"
    HEURISTIC_2SLOT = "heuristic2"
    HEURISTIC_GENERAL = "heuristic"
    NAIVE_RELAY_FIRST = "naive"
    NO_RELAY_DP_TABLE = "dp-norelay"
    FIXED_POWER = "fixed"


def _need(residual, snr):
    """Power that delivers ``residual`` nats over ``snr``; inf on a dead link."""
    residual = np.maximum(residual, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.expm1(residual) / snr
    p = np.where(residual <= 0, 0.0, p)
    return np.where((snr <= 0) & (residual > 0), np.inf, p)


class Policy:
    kind: PolicyKind
    relay: bool = True
    slots: int | None = None

    def power_batch(self, slot: int, slots: int, phase, relay_needed, dest_needed, snrs) -> np.ndarray:
        raise NotImplementedError

    def power(self, state: SystemState, slots: int) -> float:
        snr = state.snr
        res = state.residual
        out = self.power_batch(
            state.slot, slots, np.array([int(state.phase)]), np.array([res.relay_needed]),
            np.array([res.dest_needed]), np.array([[snr.sr, snr.sd, snr.rd]]),
        )
        return float(out[0])

    @property
    def name(self) -> str:
        return self.kind.value


def terminal_powers(phase, dest_needed, snrs) -> np.ndarray:
    gain = np.where(phase == Phase.PHASE2, np.maximum(snrs[:, 1], snrs[:, 2]), snrs[:, 1])
    return _need(dest_needed, gain)


@dataclass
class FixedPower(Policy):
    """Constant power every slot, topped up in the last slot to meet the deadline."""

    level: float
    kind = PolicyKind.FIXED_POWER

    def __post_init__(self):
        if not (self.level >= 0 and math.isfinite(self.level)):
            raise ConfigError("fixed power level must be finite and >= 0")

    def power_batch(self, slot, slots, phase, relay_needed, dest_needed, snrs):
        p = np.full(len(dest_needed), self.level)
        if slot == slots:
            p = np.maximum(p, terminal_powers(phase, dest_needed, snrs))
        return p


def heuristic_power_batch(slot, slots, phase, relay_needed, dest_needed, snrs) -> np.ndarray:
    """Two-slot heuristic applied in the last two slots; earlier slots idle.

    In slot K-1 the source sends just enough for whichever of relay and
    destination needs less power to decode; in slot K the remainder goes over
    the stronger link to the destination.
    """
    n = len(dest_needed)
    if slot < slots - 1:
        return np.zeros(n)
    if slot == slots:
        return terminal_powers(phase, dest_needed, snrs)
    p_relay = _need(relay_needed, snrs[:, 0])
    p_dest = _need(dest_needed, snrs[:, 1])
    p1 = np.minimum(p_relay, p_dest)
    p2 = _need(dest_needed, np.maximum(snrs[:, 1], snrs[:, 2]))
    return np.where(phase == Phase.PHASE2, p2, p1)


def heuristic_power(state: SystemState, slots: int = 2) -> float:
    """Heuristic power for one state of a ``slots``-slot horizon."""
    return HeuristicGeneralK().power(state, slots)


def heuristic_energy_bound(message: float, phi2: float) -> float:
    """Upper bound 2 * expm1(message) * phi2 on the heuristic's expected energy."""
    if message < 0 or not phi2 > 0:
        raise ValueError("message must be >= 0 and phi2 > 0")
    return 2 * math.expm1(message) * phi2


@dataclass
class Heuristic2Slot(Policy):
    kind = PolicyKind.HEURISTIC_2SLOT

    def power_batch(self, slot, slots, phase, relay_needed, dest_needed, snrs):
        if slots != 2:
            raise ConfigError("the two-slot heuristic needs K = 2")
        return heuristic_power_batch(slot, slots, phase, relay_needed, dest_needed, snrs)


@dataclass
class HeuristicGeneralK(Policy):
    kind = PolicyKind.HEURISTIC_GENERAL

    def power_batch(self, slot, slots, phase, relay_needed, dest_needed, snrs):
        return heuristic_power_batch(slot, slots, phase, relay_needed, dest_needed, snrs)


def naive_relay_first_batch(slot, slots, phase, relay_needed, dest_needed, snrs) -> np.ndarray:
    if slot == 1:
        return _need(relay_needed, snrs[:, 0])
    # phase 2: the relay forwards whatever the destination still lacks
    return np.where(phase == Phase.PHASE2, _need(dest_needed, snrs[:, 2]), terminal_powers(phase, dest_needed, snrs))


def naive_relay_first(state: SystemState, slots: int = 2) -> float:
    return NaiveRelayFirst().power(state, slots)


@dataclass
class NaiveRelayFirst(Policy):
    """Slot 1 makes the relay decode the whole message; slot 2 the relay forwards."""

    kind = PolicyKind.NAIVE_RELAY_FIRST

    def power_batch(self, slot, slots, phase, relay_needed, dest_needed, snrs):
        if slots != 2:
            raise ConfigError("the relay-first baseline needs K = 2")
        return naive_relay_first_batch(slot, slots, phase, relay_needed, dest_needed, snrs)


class DpTablePolicy(Policy):
    """Optimal policy backed by a solved value table.

    Each decision re-solves the one-slot Bellman minimisation against the next
    slot's mean table, which handles off-grid residuals by interpolation.
    """

    kind = PolicyKind.DP_TABLE

    def __init__(self, table, relay: bool | None = None):
        self.table = table
        self.relay = table.config.links.relay if relay is None else relay
        self.slots = table.slots
        if not self.relay:
            self.kind = PolicyKind.NO_RELAY_DP_TABLE

    def power_batch(self, slot, slots, phase, relay_needed, dest_needed, snrs):
        from .dp import evaluate_states

        if slots != self.table.slots:
            raise ConfigError(f"table solved for K={self.table.slots}, asked for K={slots}")
        snrs = np.asarray(snrs, float)
        dead = np.where(phase == Phase.PHASE2, np.maximum(snrs[:, 1], snrs[:, 2]), snrs[:, 1]) <= 0
        _, _, _, p = evaluate_states(self.table, slot, phase, relay_needed, dest_needed, snrs)
        if slot == slots:
            p = np.where(dead & (np.asarray(dest_needed) > 0), np.inf, p)
        return p

    def decisions(self, slot, phase, relay_needed, dest_needed, snrs):
        """(value, rate, switched, power) arrays for inspection."""
        from .dp import evaluate_states

        return evaluate_states(self.table, slot, phase, relay_needed, dest_needed, snrs)


def make_policy(kind: str | PolicyKind, table=None, level: float = 0.0) -> Policy:
    kind = PolicyKind(kind)
    if kind in (PolicyKind.DP_TABLE, PolicyKind.NO_RELAY_DP_TABLE):
        if table is None:
            raise ConfigError(f"policy {kind.value} needs a solved table")
        return DpTablePolicy(table, relay=kind is PolicyKind.DP_TABLE and table.config.links.relay)
    if kind is PolicyKind.FIXED_POWER:
        return FixedPower(level)
    return {PolicyKind.HEURISTIC_2SLOT: Heuristic2Slot, PolicyKind.HEURISTIC_GENERAL: HeuristicGeneralK, PolicyKind.NAIVE_RELAY_FIRST: NaiveRelayFirst}[kind]()
