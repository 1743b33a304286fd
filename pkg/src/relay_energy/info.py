"""Mutual-information bookkeeping for the two-phase decode-and-forward protocol.

Information is in nats throughout. A residual ``<= INFO_TOL`` counts as
decoded, which absorbs the last-ulp error of ``log1p(expm1(b))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

from .channel import LinkSnrs
from .errors import StateError

INFO_TOL = 1e-10


def mutual_info(x: float) -> float:
    """log(1 + x), the Gaussian-channel mutual information at received SNR x."""
    if x < 0:
        raise ValueError(f"received SNR must be >= 0, got {x}")
    return math.log1p(x)


def mutual_info_inv(r: float) -> float:
    """exp(r) - 1, the received SNR needed for r nats."""
    if r < 0:
        raise ValueError(f"rate must be >= 0, got {r}")
    return math.expm1(r)


class Phase(IntEnum):
    PHASE1 = 1  # relay still decoding
    PHASE2 = 2  # relay holds the message
    TERMINATED = 3  # destination decoded


@dataclass(frozen=True)
class ResidualInfo:
    """Mutual information still needed by the relay and the destination.

    Values may go negative (overshoot); they are never clamped.
    """

    relay_needed: float
    dest_needed: float

    @property
    def phase(self) -> Phase:
        if self.dest_needed <= INFO_TOL:
            return Phase.TERMINATED
        if self.relay_needed <= INFO_TOL:
            return Phase.PHASE2
        return Phase.PHASE1


@dataclass(frozen=True)
class SystemState:
    slot: int
    snr: LinkSnrs
    residual: ResidualInfo

    def __post_init__(self):
        if self.slot < 1:
            raise StateError(f"slots start at 1, got {self.slot}")
        if self.slot == 1 and self.phase is not Phase.PHASE1:
            raise StateError("slot 1 is always in phase 1")

    @property
    def phase(self) -> Phase:
        return self.residual.phase

    @classmethod
    def initial(cls, message: float, snr: LinkSnrs) -> SystemState:
        """Start of slot 1 with ``message`` nats owed to both receivers."""
        return cls(1, snr, ResidualInfo(message, message))


def transition(state: SystemState, power: float, next_snr: LinkSnrs | None = None) -> SystemState:
    """Apply ``power`` in the current slot and move to the next one.

    In phase 2 only the node with the stronger link to the destination
    transmits, so the destination sees ``power * max(sd, rd)``.
    """
    if state.phase is Phase.TERMINATED:
        raise StateError("no transition out of the terminated phase")
    if power < 0:
        raise ValueError(f"power must be >= 0, got {power}")
    snr = state.snr
    res = state.residual
    if state.phase is Phase.PHASE1:
        new = ResidualInfo(res.relay_needed - mutual_info(power * snr.sr), res.dest_needed - mutual_info(power * snr.sd))
    else:
        new = replace(res, dest_needed=res.dest_needed - mutual_info(power * snr.strongest_to_dest))
    return SystemState(state.slot + 1, next_snr if next_snr is not None else snr, new)


@dataclass(frozen=True)
class SingleNodePower:
    power: float
    node: str  # "source" or "relay"


def reduce_phase2_power(p_s: float, p_r: float, snr: LinkSnrs) -> SingleNodePower:
    """Move a joint (source, relay) phase-2 allocation onto the stronger node.

    The received SNR ``p_s*sd + p_r*rd`` is preserved and the total power does
    not increase. Ties go to the source.
    """
    if p_s < 0 or p_r < 0:
        raise ValueError("powers must be >= 0")
    sd, rd = snr.sd, snr.rd
    if sd == 0 and rd == 0:
        if p_s + p_r > 0:
            raise ValueError("both destination links are dead; positive power is meaningless")
        return SingleNodePower(0.0, "source")
    if sd >= rd:
        return SingleNodePower(p_s + p_r * rd / sd, "source")
    return SingleNodePower(p_r + p_s * sd / rd, "relay")
