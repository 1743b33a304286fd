"""Exact one- and two-slot minimum expected energies.

For two slots the first-slot rate R splits into a stay interval [0, B')
(relay still short, second slot costs ``phi1 * expm1(B - R)``) and a switch
interval [B', B] (relay decoded, second slot costs ``phi2 * expm1(B - R)``).
Each branch objective is convex with a closed-form stationary point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import CLOSED_FORM_STREAM, LinkDistributions, LinkSnrs, is_unbounded, phi1 as phi1_of, phi2 as phi2_of
from .errors import ConfigError

STAY = "stay"
SWITCH = "switch"


def clamp(x: float, a: float, b: float) -> float:
    if a > b:
        raise ValueError(f"empty interval [{a}, {b}]")
    return min(max(x, a), b)


def pos_part(x: float) -> float:
    return max(0.0, x)


@dataclass(frozen=True)
class K2Instance:
    snr1: LinkSnrs
    target: float
    phi1: float
    phi2: float

    def __post_init__(self):
        if self.target < 0:
            raise ValueError("target must be >= 0")
        if not (self.phi1 > 0 and self.phi2 > 0):
            raise ValueError("phi1 and phi2 must be positive")

    @property
    def threshold(self) -> float:
        """First-slot destination rate at which the relay decodes the message."""
        sr, sd = self.snr1.sr, self.snr1.sd
        if sr <= 0:
            return math.inf
        return math.log1p(math.expm1(self.target) * sd / sr)

    @property
    def boundary(self) -> float:
        return min(self.threshold, self.target)

    def g(self, branch: int, r):
        """Branch objective g_i(R) = expm1(R)/sd + phi_i * expm1(B - R)."""
        phi = self.phi1 if branch == 1 else self.phi2
        return np.expm1(r) / self.snr1.sd + phi * np.expm1(self.target - r)

    def stationary(self, branch: int) -> float:
        phi = self.phi1 if branch == 1 else self.phi2
        return (math.log(self.snr1.sd * phi) + self.target) / 2


def k2_value(inst: K2Instance) -> tuple[float, float, str]:
    """Minimum two-slot expected energy from the first slot: (J, R*, branch)."""
    if not inst.snr1.sd > 0:
        raise ValueError("k2_value needs a positive source-destination SNR")
    b = inst.target
    if b == 0:
        return 0.0, 0.0, SWITCH
    bp = inst.boundary
    r1 = min(pos_part(inst.stationary(1)), bp)
    r2 = clamp(inst.stationary(2), bp, b)
    f1 = float(inst.g(1, r1))
    f2 = float(inst.g(2, r2))
    if f2 <= f1:
        return f2, r2, SWITCH
    return f1, r1, STAY


def k2_values(snrs: np.ndarray, target: float, phi1: float, phi2: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised k2_value over an (n, 3) array of first-slot (sr, sd, rd).

    Returns (J, R*, switched).
    """
    snrs = np.asarray(snrs, float).reshape(-1, 3)
    sr, sd = snrs[:, 0], snrs[:, 1]
    if np.any(sd <= 0):
        raise ValueError("k2_values needs positive source-destination SNRs")
    n = sd.size
    if target == 0:
        return np.zeros(n), np.zeros(n), np.ones(n, dtype=bool)
    with np.errstate(divide="ignore", over="ignore"):
        rth = np.where(sr > 0, np.log1p(math.expm1(target) * sd / np.where(sr > 0, sr, 1.0)), np.inf)
    bp = np.minimum(rth, target)
    r1 = np.minimum(np.maximum((np.log(sd * phi1) + target) / 2, 0.0), bp)
    r2 = np.clip((np.log(sd * phi2) + target) / 2, bp, target)
    f1 = np.expm1(r1) / sd + phi1 * np.expm1(target - r1)
    f2 = np.expm1(r2) / sd + phi2 * np.expm1(target - r2)
    sw = f2 <= f1
    return np.where(sw, f2, f1), np.where(sw, r2, r1), sw


def k1_nmese(links: LinkDistributions, rate: float, phi1: float | None = None) -> float:
    """One-slot NMESE, phi1 * expm1(R_eff)."""
    p = phi1_of(links.sd) if phi1 is None else phi1
    if is_unbounded(p):
        return math.inf
    return p * math.expm1(rate)


def _phis(links: LinkDistributions, phi1, phi2, seed) -> tuple[float, float]:
    p1 = phi1_of(links.sd) if phi1 is None else phi1
    if phi2 is None:
        # without a relay the second slot is still served by the source alone
        p2 = p1 if not links.relay else phi2_of(links.sd, links.rd, seed=seed).value
    else:
        p2 = phi2
    if is_unbounded(p1) or is_unbounded(p2):
        raise ConfigError("two-slot closed form needs finite phi1 and phi2")
    return float(p1), float(p2)


def k2_nmese(
    links: LinkDistributions,
    rate: float,
    n_trials: int = 100_000,
    seed: int = 0,
    phi1: float | None = None,
    phi2: float | None = None,
    draws: np.ndarray | None = None,
) -> tuple[float, float]:
    """Two-slot NMESE and its standard error by Monte Carlo over first-slot SNRs.

    phi1/phi2 default to the channel statistics (closed form when available);
    pass them to use conditional or empirical values. ``draws`` overrides the
    first-slot SNR sample.
    """
    if not rate > 0:
        raise ConfigError("rate must be > 0")
    p1, p2 = _phis(links, phi1, phi2, seed)
    if draws is None:
        draws = links.draw(seed, CLOSED_FORM_STREAM, 1, n_trials)
    j, _, _ = k2_values(draws, 2 * rate, p1, p2)
    n = j.size
    se = float(j.std(ddof=1) / math.sqrt(n)) / 2 if n > 1 else 0.0
    return float(j.mean()) / 2, se
