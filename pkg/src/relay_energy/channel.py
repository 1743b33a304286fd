"""Link SNR distributions, samplers and the energy-boundedness statistics.

All SNRs are linear (not dB). The statistics ``phi1 = E[1/snr_sd]`` and
``phi2 = E[1/max(snr_sd, snr_rd)]`` decide whether the minimum expected sum
energy stays finite when the fading approaches Rayleigh.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum
from typing import NamedTuple, Protocol

import numpy as np

from .errors import ConfigError

EULER_GAMMA = 0.57721566490153286061

# Stream labels for np.random.SeedSequence spawn keys. Solver and evaluator
# draws never share a label, so evaluation is independent of the scenarios
# the value tables were fitted on.
SOLVER_STREAM = 0
EVAL_STREAM = 1
PHI_STREAM = 2
CLOSED_FORM_STREAM = 3

LINKS = ("sr", "sd", "rd")


def rng_stream(seed: int, *labels: int) -> np.random.Generator:
    """Independent generator for ``(seed, labels)``; same inputs, same stream."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in labels)))


class Kind(str, Enum):
    TRUNC_EXP = "trunc-exp"
    RAYLEIGH = "rayleigh"
    RICIAN = "rician"
    CHI2 = "chi2"
    # Deterministic SNR. Not a fading model; used for unit tests and sanity runs.
    CONSTANT = "constant"


@dataclass(frozen=True)
class DistributionSpec:
    """One link's SNR law.

    ``mean_snr`` is the scale parameter. For the chi-squared family the samples
    are normalised so that ``E[snr] == mean_snr`` whatever ``dof`` and
    ``noncentrality`` are. For the truncated exponential it is the exponential
    scale (the mean is ``trunc + mean_snr``), following the usual naming.
    """

    kind: Kind
    mean_snr: float = 1.0
    trunc: float = 0.0
    dof: int = 2
    noncentrality: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.kind is Kind.CONSTANT:
            if not self.mean_snr >= 0:
                raise ConfigError(f"constant SNR must be >= 0, got {self.mean_snr}")
        elif not (self.mean_snr > 0 and math.isfinite(self.mean_snr)):
            raise ConfigError(f"mean_snr must be positive and finite, got {self.mean_snr}")
        if not self.trunc >= 0:
            raise ConfigError(f"trunc must be >= 0, got {self.trunc}")
        if self.trunc and self.kind is not Kind.TRUNC_EXP:
            raise ConfigError("trunc only applies to the truncated exponential")
        if self.dof < 2 or self.dof % 2:
            raise ConfigError(f"dof must be a positive even integer, got {self.dof}")
        if not self.noncentrality >= 0:
            raise ConfigError(f"noncentrality must be >= 0, got {self.noncentrality}")
        if self.kind in (Kind.RAYLEIGH, Kind.RICIAN) and self.dof != 2:
            raise ConfigError(f"{self.kind.value} has dof 2")
        if self.kind is Kind.RAYLEIGH and self.noncentrality:
            raise ConfigError("rayleigh has no noncentrality; use rician")
        if self.kind in (Kind.TRUNC_EXP, Kind.CONSTANT) and (self.dof != 2 or self.noncentrality):
            raise ConfigError(f"dof/noncentrality do not apply to {self.kind.value}")

    @classmethod
    def truncated_exponential(cls, mean_snr=1.0, trunc=0.0) -> DistributionSpec:
        return cls(Kind.TRUNC_EXP, mean_snr, trunc=trunc)

    @classmethod
    def rayleigh(cls, mean_snr=1.0) -> DistributionSpec:
        return cls(Kind.RAYLEIGH, mean_snr)

    @classmethod
    def rician(cls, mean_snr=1.0, noncentrality=1.0) -> DistributionSpec:
        return cls(Kind.RICIAN, mean_snr, noncentrality=noncentrality)

    @classmethod
    def chi2(cls, mean_snr=1.0, dof=4, noncentrality=0.0) -> DistributionSpec:
        return cls(Kind.CHI2, mean_snr, dof=dof, noncentrality=noncentrality)

    @classmethod
    def constant(cls, value: float) -> DistributionSpec:
        return cls(Kind.CONSTANT, value)

    @property
    def is_exponential(self) -> bool:
        """Exponential after an optional shift (truncated exponential or Rayleigh)."""
        return self.kind in (Kind.TRUNC_EXP, Kind.RAYLEIGH)

    @property
    def small_ball_exponent(self) -> float:
        """``a`` with ``P(snr <= x) ~ x**a`` as x -> 0 (inf if the support avoids 0)."""
        if self.kind is Kind.TRUNC_EXP:
            return math.inf if self.trunc > 0 else 1.0
        if self.kind is Kind.CONSTANT:
            return math.inf if self.mean_snr > 0 else 0.0
        return self.dof / 2

    def sample(self, rng: np.random.Generator, size=None):
        return sample(self, rng, size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> DistributionSpec:
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad distribution entry {d!r}: {exc}") from None


def truncexp_from_uniform(u, mean_snr: float, trunc: float):
    """Inverse-CDF map for the truncated exponential, ``u`` in (0, 1]."""
    return trunc - mean_snr * np.log(u)


def sample(dist: DistributionSpec, rng: np.random.Generator, size=None):
    """Draw SNR samples; a float when ``size`` is None, else an array."""
    n = 1 if size is None else size
    if dist.kind is Kind.TRUNC_EXP:
        u = 1.0 - rng.random(n)  # (0, 1]
        out = truncexp_from_uniform(u, dist.mean_snr, dist.trunc)
    elif dist.kind is Kind.CONSTANT:
        out = np.full(n, float(dist.mean_snr))
    else:
        out = _chi2_constructive(dist, rng, n)
    return float(out[0]) if size is None else out


def _chi2_constructive(dist: DistributionSpec, rng: np.random.Generator, n) -> np.ndarray:
    # Sum of |X_i|^2 over s complex Gaussians, unit variance per real dimension;
    # the whole noncentrality sits on the first real component.
    s = dist.dof // 2
    shape = (n,) if np.isscalar(n) else tuple(n)
    z = rng.standard_normal(shape + (s, 2))
    z[..., 0, 0] += math.sqrt(dist.noncentrality)
    raw = np.sum(z * z, axis=(-2, -1))
    return raw * (dist.mean_snr / (dist.dof + dist.noncentrality))


# ---------------------------------------------------------------------------
# Link triples and scenario sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LinkSnrs:
    """SNRs of the source-relay, source-destination and relay-destination links."""

    sr: float
    sd: float
    rd: float

    def __post_init__(self):
        if min(self.sr, self.sd, self.rd) < 0:
            raise ValueError(f"link SNRs must be >= 0, got {self}")

    @property
    def strongest_to_dest(self) -> float:
        return max(self.sd, self.rd)

    @property
    def relay_present(self) -> bool:
        return self.sr > 0


@dataclass(frozen=True)
class LinkDistributions:
    """Per-link laws. ``sr=None`` means there is no relay (its SNR is 0)."""

    sr: DistributionSpec | None
    sd: DistributionSpec
    rd: DistributionSpec

    @classmethod
    def iid(cls, dist: DistributionSpec, relay: bool = True) -> LinkDistributions:
        return cls(dist if relay else None, dist, dist)

    @property
    def relay(self) -> bool:
        return self.sr is not None

    def without_relay(self) -> LinkDistributions:
        return LinkDistributions(None, self.sd, self.rd)

    def draw(self, seed: int, stream: int, slot: int, n: int) -> np.ndarray:
        """``(n, 3)`` array of (sr, sd, rd) draws for one slot.

        Each link has its own sub-stream, so switching the relay off leaves the
        sd/rd draws unchanged (common random numbers across relay settings).
        """
        out = np.zeros((n, 3))
        for j, name in enumerate(LINKS):
            dist = getattr(self, name)
            if dist is not None:
                out[:, j] = sample(dist, rng_stream(seed, stream, slot, j), n)
        return out

    def to_dict(self) -> dict:
        return {name: (None if getattr(self, name) is None else getattr(self, name).to_dict()) for name in LINKS}

    @classmethod
    def from_dict(cls, d: dict) -> LinkDistributions:
        return cls(*(None if d.get(name) is None else DistributionSpec.from_dict(d[name]) for name in LINKS))


class ConditionalSampler(Protocol):
    """Draws slot-k SNR triples given the previous ``order`` slots.

    ``history`` has shape ``(n, order, 3)``. Only ``order == 0`` samplers are
    accepted by the DP solver.
    """

    order: int

    def sample(self, seed: int, stream: int, slot: int, history: np.ndarray, n: int) -> np.ndarray: ...


@dataclass(frozen=True)
class IidSampler:
    links: LinkDistributions
    order: int = 0

    def sample(self, seed, stream, slot, history, n):
        return self.links.draw(seed, stream, slot, n)


@dataclass
class ScenarioSet:
    """Per-slot Monte Carlo SNR scenarios; ``draws[k - 1]`` has shape (n, 3)."""

    slots: int
    draws: np.ndarray
    seed: int
    order: int = 0

    @classmethod
    def draw(cls, sampler: ConditionalSampler, slots: int, n: int, seed: int, stream: int = SOLVER_STREAM) -> ScenarioSet:
        draws = np.empty((slots, n, 3))
        for k in range(1, slots + 1):
            lo = max(0, k - 1 - sampler.order)
            history = np.swapaxes(draws[lo:k - 1], 0, 1)
            draws[k - 1] = sampler.sample(seed, stream, k, history, n)
        return cls(slots, draws, seed, sampler.order)

    @property
    def n(self) -> int:
        return self.draws.shape[1]

    def slot(self, k: int) -> np.ndarray:
        return self.draws[k - 1]


# ---------------------------------------------------------------------------
# Exponential integral
# ---------------------------------------------------------------------------


def exp_integral_e1(x: float) -> float:
    """E1(x), the integral of exp(-t)/t from x to infinity, for x > 0.

    Power series for x <= 1, Lentz continued fraction above.
    """
    x = float(x)
    if not x > 0:
        raise ValueError(f"E1 needs x > 0, got {x}")
    if x <= 1.0:
        total = 0.0
        term = 1.0
        for n in range(1, 200):
            term *= -x / n
            contrib = term / n
            total += contrib
            if abs(contrib) < 1e-17 * abs(total):
                break
        return -EULER_GAMMA - math.log(x) - total
    tiny = 1e-300
    b = x + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        a = -i * i
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x)


def _scaled_e1(eps: float, scale: float) -> float:
    """``exp(eps/scale) * E1(eps/scale) / scale``, the truncated-exponential E[1/snr]."""
    z = eps / scale
    return math.exp(z) * exp_integral_e1(z) / scale


# ---------------------------------------------------------------------------
# Boundedness statistics
# ---------------------------------------------------------------------------


class Unbounded:
    """Marker for a divergent expectation. Deliberately not a number."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    __str__ = __repr__


UNBOUNDED = Unbounded()


def is_unbounded(value) -> bool:
    return value is UNBOUNDED


class PhiValue(NamedTuple):
    value: float | Unbounded
    stderr: float
    method: str


def phi1(dist: DistributionSpec) -> float | Unbounded:
    """E[1/snr] for one link, or ``UNBOUNDED`` when the integral diverges."""
    if dist.small_ball_exponent <= 1.0:
        return UNBOUNDED
    if dist.kind is Kind.TRUNC_EXP:
        return _scaled_e1(dist.trunc, dist.mean_snr)
    if dist.kind is Kind.CONSTANT:
        return 1.0 / dist.mean_snr
    # Noncentral chi-squared is a Poisson(lambda/2) mixture of central ones with
    # dof + 2j degrees of freedom, and E[1/chi2_v] = 1/(v - 2).
    v, lam = dist.dof, dist.noncentrality
    half = lam / 2
    raw = 0.0
    jmax = int(half + 40 * math.sqrt(half) + 60)
    for j in range(jmax):
        logw = -half + (j * math.log(half) if half > 0 else (0.0 if j == 0 else -math.inf)) - math.lgamma(j + 1)
        raw += math.exp(logw) / (v + 2 * j - 2)
    return raw * (v + lam) / dist.mean_snr


def phi2_asymptote(mean_sd: float, mean_rd: float) -> float:
    """Limit of phi2 for two exponential links as the truncation goes to 0."""
    if not (mean_sd > 0 and mean_rd > 0):
        raise ValueError("means must be positive")
    return math.log1p(mean_sd / mean_rd) / mean_sd + math.log1p(mean_rd / mean_sd) / mean_rd


def _as_trunc_exp(dist: DistributionSpec) -> tuple[float, float]:
    return dist.mean_snr, (dist.trunc if dist.kind is Kind.TRUNC_EXP else 0.0)


def phi2(
    dist_sd: DistributionSpec,
    dist_rd: DistributionSpec,
    n_mc: int = 1_000_000,
    seed: int = 0,
) -> PhiValue:
    """E[1/max(snr_sd, snr_rd)] for independent links.

    Closed form (three scaled E1 terms with the harmonic-mean scale) when both
    links are exponential with a common truncation; Monte Carlo otherwise.
    """
    if dist_sd.small_ball_exponent + dist_rd.small_ball_exponent <= 1.0:
        return PhiValue(UNBOUNDED, 0.0, "divergent")
    if dist_sd.is_exponential and dist_rd.is_exponential:
        (m_sd, t_sd), (m_rd, t_rd) = _as_trunc_exp(dist_sd), _as_trunc_exp(dist_rd)
        if t_sd == t_rd:
            if t_sd == 0.0:
                return PhiValue(phi2_asymptote(m_sd, m_rd), 0.0, "closed-form")
            hm = 1.0 / (1.0 / m_sd + 1.0 / m_rd)
            value = _scaled_e1(t_sd, m_sd) + _scaled_e1(t_sd, m_rd) - _scaled_e1(t_sd, hm)
            return PhiValue(value, 0.0, "closed-form")
        warnings.warn("phi2: truncation thresholds differ, falling back to Monte Carlo", stacklevel=2)
    return phi2_monte_carlo(dist_sd, dist_rd, n_mc, seed)


def phi2_monte_carlo(dist_sd, dist_rd, n_mc=1_000_000, seed=0) -> PhiValue:
    a = sample(dist_sd, rng_stream(seed, PHI_STREAM, 0), n_mc)
    b = sample(dist_rd, rng_stream(seed, PHI_STREAM, 1), n_mc)
    inv = 1.0 / np.maximum(a, b)
    return PhiValue(float(inv.mean()), float(inv.std(ddof=1) / math.sqrt(n_mc)), "monte-carlo")


@dataclass(frozen=True)
class BoundednessReport:
    no_relay: str
    relay: str
    phi1: float | Unbounded
    phi2: PhiValue
    phi2_sr: PhiValue

    def __str__(self):
        return f"no_relay: {self.no_relay.upper()}, relay: {self.relay.upper()}"

    def to_dict(self) -> dict:
        def num(v):
            return None if is_unbounded(v) else v

        return {
            "no_relay": self.no_relay,
            "relay": self.relay,
            "phi1": num(self.phi1),
            "phi2": num(self.phi2.value),
            "phi2_stderr": self.phi2.stderr,
            "phi2_method": self.phi2.method,
            "phi_sd_sr": num(self.phi2_sr.value),
        }


def boundedness_report(links: LinkDistributions, n_mc: int = 1_000_000, seed: int = 0) -> BoundednessReport:
    """Categorical boundedness verdicts for the no-relay and relay systems.

    Without a relay the energy is bounded iff E[1/snr_sd] is finite. With a
    relay, finiteness of E[1/max(sd, rd)] (and of E[1/max(sd, sr)], which the
    two-slot heuristic pays in its first slot) is sufficient but not necessary,
    so a failure there is reported as inconclusive.
    """
    p1 = phi1(links.sd)
    p2 = phi2(links.sd, links.rd, n_mc, seed)
    sr = links.sr if links.sr is not None else DistributionSpec.constant(0.0)
    p2_sr = phi2(links.sd, sr, n_mc, seed + 1)
    no_relay = "unbounded" if is_unbounded(p1) else "bounded"
    relay_ok = not is_unbounded(p2.value) and not is_unbounded(p2_sr.value) and links.relay
    return BoundednessReport(no_relay, "bounded" if relay_ok else "inconclusive", p1, p2, p2_sr)
