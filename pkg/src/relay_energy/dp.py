"""Backward Bellman recursion over a discretised residual-information grid.

The solver works in the rate domain: in each slot it picks the rate R the
destination collects (power ``expm1(R)/snr``) and, in phase 1, whether that
rate is high enough for the relay to finish decoding. Expectations over the
next slot's SNRs are averages over a fixed Monte Carlo scenario set per slot
(i.i.d. slots), shared by every grid point of that slot.

Binary table format (little endian), version 1::

    magic     8s   b"RLYDPTB\\x00"
    version   u16
    slots     u16  K
    delta     f64  grid step (nats)
    n_relay   u32  relay-axis grid size
    n_dest    u32  dest-axis grid size
    seed      i64
    meta_len  u32  length of the UTF-8 JSON metadata that follows
    meta      JSON (config, grid, slot-1 summary)
    arrays    f64 phase1 (K-1, n_relay, n_dest), f64 phase2 (K-1, n_dest),
              u8 saturated1, u8 saturated2 (same shapes),
              f64 slot1_values (N,), f64 slot1_rates (N,), u8 slot1_switch (N,)
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels as kern
from .channel import SOLVER_STREAM, IidSampler, LinkDistributions, LinkSnrs, ScenarioSet
from .errors import ConfigError
from .info import Phase, mutual_info_inv

FORMAT_VERSION = 1
MAGIC = b"RLYDPTB\x00"
_HEADER = struct.Struct("<8sHHdIIqI")
_MODES = {"linear": kern.LINEAR, "nearest": kern.NEAREST}


@dataclass(frozen=True)
class Grid:
    """Residual levels ``0, step, ..., n*step`` covering ``[0, max_info]``.

    ``top`` is ``max_info`` rounded up to a whole number of steps;
    ``adjustment`` records by how much.
    """

    step: float
    max_info: float

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError(f"grid step must be > 0, got {self.step}")
        if not self.max_info >= 0:
            raise ConfigError(f"max_info must be >= 0, got {self.max_info}")

    @property
    def n(self) -> int:
        return max(1, math.ceil(self.max_info / self.step - 1e-9))

    @property
    def size(self) -> int:
        return self.n + 1

    @property
    def top(self) -> float:
        return self.n * self.step

    @property
    def adjustment(self) -> float:
        return self.top - self.max_info

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.size) * self.step


@dataclass(frozen=True)
class InnerSearch:
    """Per-branch rate minimisation: a scan of ``scan_points`` intervals, then
    ``refine_iters`` golden-section steps inside the best bracket."""

    scan_points: int = 16
    refine_iters: int = 12
    interpolation: str = "linear"

    def __post_init__(self):
        if self.scan_points < 1 or self.refine_iters < 0:
            raise ConfigError("scan_points must be >= 1 and refine_iters >= 0")
        if self.interpolation not in _MODES:
            raise ConfigError(f"interpolation must be one of {sorted(_MODES)}")

    @property
    def mode(self) -> int:
        return _MODES[self.interpolation]


@dataclass(frozen=True)
class SolverConfig:
    slots: int
    rate: float
    links: LinkDistributions
    delta: float = 0.01
    n_scenarios: int = 5000
    seed: int = 0
    search: InnerSearch = field(default_factory=InnerSearch)
    value_cap: float = 1e9

    def __post_init__(self):
        if self.slots < 1:
            raise ConfigError(f"slots must be >= 1, got {self.slots}")
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"rate must be > 0, got {self.rate}")
        if self.n_scenarios < 1:
            raise ConfigError(f"n_scenarios must be >= 1, got {self.n_scenarios}")
        if not self.value_cap > 0:
            raise ConfigError("value_cap must be > 0")
        Grid(self.delta, self.message)

    @property
    def message(self) -> float:
        """Total information owed to the destination, K * R_eff nats."""
        return self.slots * self.rate

    @property
    def grid(self) -> Grid:
        return Grid(self.delta, self.message)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["links"] = self.links.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SolverConfig:
        d = dict(d)
        d["links"] = LinkDistributions.from_dict(d["links"])
        d["search"] = InnerSearch(**d.get("search", {}))
        return cls(**d)


@dataclass
class ValueTable:
    """Scenario-averaged cost-to-go tables for slots 2..K plus slot-1 results.

    ``phase1[k - 2]`` is the mean J_{k,1} indexed ``[relay_idx, dest_idx]`` and
    ``phase2[k - 2]`` the mean J_{k,2} indexed ``[dest_idx]``. Values above the
    cap are stored as the cap and flagged in ``saturated1/2``.
    """

    config: SolverConfig
    phase1: np.ndarray
    phase2: np.ndarray
    saturated1: np.ndarray
    saturated2: np.ndarray
    slot1_values: np.ndarray
    slot1_rates: np.ndarray
    slot1_switch: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.config.grid

    @property
    def slots(self) -> int:
        return self.config.slots

    def next_tables(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Mean tables of slot k+1, used when deciding in slot k < K."""
        if not 1 <= k < self.slots:
            raise IndexError(f"no continuation table after slot {k}")
        return self.phase1[k - 1], self.phase2[k - 1]

    def mean_value(self, k: int, relay_needed: float, dest_needed: float) -> float:
        """Interpolated E[J_k] at a residual pair, for 2 <= k <= K.

        The phase follows from the residuals: dest_needed <= 0 costs nothing and
        relay_needed <= 0 reads the phase-2 table.
        """
        if not 2 <= k <= self.slots:
            raise IndexError(f"mean tables exist for slots 2..{self.slots}")
        if dest_needed <= 0:
            return 0.0
        step, mode = self.grid.step, self.config.search.mode
        if relay_needed <= 0:
            return float(kern.interp1(self.phase2[k - 2], dest_needed, step, mode))
        return float(kern.interp2(self.phase1[k - 2], relay_needed, dest_needed, step, mode))

    @property
    def nmese(self) -> float:
        return float(self.slot1_values.mean() / self.slots)

    @property
    def nmese_stderr(self) -> float:
        n = self.slot1_values.size
        if n < 2:
            return 0.0
        return float(self.slot1_values.std(ddof=1) / math.sqrt(n) / self.slots)

    @property
    def effectively_unbounded(self) -> bool:
        return bool(self.saturated1.any() or self.saturated2.any())

    # -- serialisation -----------------------------------------------------

    def _meta(self) -> dict:
        grid = self.grid
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "grid": {"step": grid.step, "max_info": grid.max_info, "top": grid.top, "size": grid.size, "adjustment": grid.adjustment},
            "nmese": self.nmese,
            "nmese_stderr": self.nmese_stderr,
            "effectively_unbounded": self.effectively_unbounded,
        }

    def to_bytes(self) -> bytes:
        g = self.grid.size
        meta = json.dumps(self._meta()).encode()
        head = _HEADER.pack(MAGIC, FORMAT_VERSION, self.slots, self.grid.step, g, g, self.config.seed, len(meta))
        body = [
            np.ascontiguousarray(self.phase1, "<f8").tobytes(),
            np.ascontiguousarray(self.phase2, "<f8").tobytes(),
            self.saturated1.astype("u1").tobytes(),
            self.saturated2.astype("u1").tobytes(),
            np.ascontiguousarray(self.slot1_values, "<f8").tobytes(),
            np.ascontiguousarray(self.slot1_rates, "<f8").tobytes(),
            self.slot1_switch.astype("u1").tobytes(),
        ]
        return head + meta + b"".join(body)

    @classmethod
    def from_bytes(cls, data: bytes) -> ValueTable:
        if len(data) < _HEADER.size:
            raise ValueError("truncated value-table file")
        magic, version, slots, delta, n_relay, n_dest, seed, meta_len = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError("not a value-table file (bad magic)")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported value-table version {version}")
        off = _HEADER.size
        meta = json.loads(data[off:off + meta_len].decode())
        off += meta_len
        config = SolverConfig.from_dict(meta["config"])
        n = config.n_scenarios
        m = slots - 1

        def take(count, dtype, shape):
            nonlocal off
            width = np.dtype(dtype).itemsize * count
            if off + width > len(data):
                raise ValueError("truncated value-table file")
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(shape).copy()
            off += width
            return arr

        p1 = take(m * n_relay * n_dest, "<f8", (m, n_relay, n_dest))
        p2 = take(m * n_dest, "<f8", (m, n_dest))
        s1 = take(m * n_relay * n_dest, "u1", (m, n_relay, n_dest)).astype(bool)
        s2 = take(m * n_dest, "u1", (m, n_dest)).astype(bool)
        v = take(n, "<f8", (n,))
        r = take(n, "<f8", (n,))
        sw = take(n, "u1", (n,)).astype(bool)
        if config.slots != slots or config.delta != delta or config.seed != seed:
            raise ValueError("value-table header disagrees with its metadata")
        return cls(config, p1.astype(float), p2.astype(float), s1, s2, v.astype(float), r.astype(float), sw)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> ValueTable:
        return cls.from_bytes(Path(path).read_bytes())

    def to_json(self) -> str:
        d = self._meta()
        d["phase1"] = self.phase1.tolist()
        d["phase2"] = self.phase2.tolist()
        d["slot1"] = {"values": self.slot1_values.tolist(), "rates": self.slot1_rates.tolist(), "switch": self.slot1_switch.tolist()}
        return json.dumps(d)


# ---------------------------------------------------------------------------
# Bellman pieces
# ---------------------------------------------------------------------------


def terminal_power(phase: Phase | int, dest_needed: float, snr: LinkSnrs) -> float:
    """Least last-slot power that lets the destination decode; inf if impossible."""
    if dest_needed < 0:
        raise ValueError("dest_needed must be >= 0")
    if dest_needed == 0:
        return 0.0
    phase = Phase(phase)
    if phase is Phase.TERMINATED:
        return 0.0
    gain = snr.sd if phase is Phase.PHASE1 else snr.strongest_to_dest
    if gain <= 0:
        return math.inf
    return mutual_info_inv(dest_needed) / gain


def _cap(mean: np.ndarray, cap: float) -> tuple[np.ndarray, np.ndarray]:
    sat = ~(mean <= cap)
    return np.where(sat, cap, mean), sat


def terminal_tables(last_slot_snrs: np.ndarray, grid: Grid, cap: float = 1e9):
    """Mean J_{K,1} and J_{K,2} from the last slot's scenarios."""
    sd = np.maximum(last_slot_snrs[:, 1], kern.TINY_SNR)
    gt = np.maximum(np.maximum(last_slot_snrs[:, 1], last_slot_snrs[:, 2]), kern.TINY_SNR)
    need = np.expm1(grid.points)
    with np.errstate(over="ignore"):
        j2 = np.mean(1.0 / gt) * need
        j1 = np.mean(1.0 / sd) * need
    j1, s1 = _cap(np.broadcast_to(j1, (grid.size, grid.size)).copy(), cap)
    j2, s2 = _cap(j2, cap)
    return j1, j2, s1, s2


@dataclass
class Phase2Step:
    mean: np.ndarray  # (G,)
    values: np.ndarray  # (N, G), empty unless kept
    rates: np.ndarray


def bellman_step_phase2(snrs: np.ndarray, next_j2: np.ndarray, grid: Grid, search: InnerSearch = InnerSearch(), keep: bool = True) -> Phase2Step:
    """One phase-2 backward step: for every dest residual and scenario, the
    best rate R in [0, dest_needed] against ``expm1(R)/max(sd, rd) + E J_{k+1,2}``."""
    gt = np.ascontiguousarray(np.maximum(snrs[:, 1], snrs[:, 2]), dtype=float)
    n, g = gt.size, grid.size
    vals = np.empty((n, g) if keep else (1, 1))
    rates = np.empty_like(vals)
    mean = kern.phase2_slot(gt, np.ascontiguousarray(next_j2, float), grid.step, search.mode, search.scan_points, search.refine_iters, keep, vals, rates)
    if not keep:
        vals = rates = np.empty((0, g))
    return Phase2Step(mean, vals, rates)


@dataclass
class Phase1Step:
    mean: np.ndarray  # (G, G) [relay_idx, dest_idx]
    values: np.ndarray  # (N, G, G) when kept
    rates: np.ndarray
    switched: np.ndarray


def bellman_step_phase1(
    snrs: np.ndarray,
    next_j1: np.ndarray,
    next_j2: np.ndarray,
    grid: Grid,
    search: InnerSearch = InnerSearch(),
    relay: bool = True,
    keep: bool = False,
) -> Phase1Step:
    """One phase-1 backward step.

    Per state and scenario, the stay branch (relay still short after this
    slot) and the switch branch (relay decodes, continue in phase 2) are
    minimised over their own rate intervals and the cheaper one is kept.
    """
    sr = np.ascontiguousarray(snrs[:, 0], float)
    sd = np.ascontiguousarray(snrs[:, 1], float)
    n, g = sd.size, grid.size
    shape = (n, g, g) if keep else (1, 1, 1)
    vals = np.empty(shape)
    rates = np.empty(shape)
    sw = np.zeros(shape, dtype=bool)
    mean = kern.phase1_slot(
        sr, sd, np.ascontiguousarray(next_j1, float), np.ascontiguousarray(next_j2, float),
        grid.step, search.mode, search.scan_points, search.refine_iters, relay, keep, vals, rates, sw,
    )
    if not keep:
        vals = rates = np.empty((0, g, g))
        sw = np.empty((0, g, g), dtype=bool)
    return Phase1Step(mean, vals, rates, sw)


def evaluate_states(
    table: ValueTable,
    slot: int,
    phase,
    relay_needed,
    dest_needed,
    snrs: np.ndarray,
):
    """Vectorised optimal decision at ``slot`` for arrays of states.

    Returns (value, rate, switched, power) arrays. ``snrs`` has shape (n, 3).
    """
    snrs = np.asarray(snrs, float).reshape(-1, 3)
    n = snrs.shape[0]
    phase = np.broadcast_to(np.asarray(phase, np.int64), (n,)).copy()
    br = np.broadcast_to(np.asarray(relay_needed, float), (n,)).copy()
    bd = np.broadcast_to(np.asarray(dest_needed, float), (n,)).copy()
    last = slot == table.slots
    if last:
        j1 = np.zeros((1, 1))
        j2 = np.zeros(1)
    else:
        j1, j2 = table.next_tables(slot)
    s = table.config.search
    return kern.decide_batch(
        last, phase, br, bd,
        np.ascontiguousarray(snrs[:, 0]), np.ascontiguousarray(snrs[:, 1]), np.ascontiguousarray(snrs[:, 2]),
        j1, j2, table.grid.step, s.mode, s.scan_points, s.refine_iters,
    )


@dataclass
class SolveResult:
    table: ValueTable
    policy: object
    nmese: float
    nmese_stderr: float
    scenarios: ScenarioSet


def solve(config: SolverConfig, scenarios: ScenarioSet | None = None) -> SolveResult:
    """Backward recursion k = K..1 and the slot-1 NMESE estimate.

    Slot k's mean tables average over slot k's scenario set; slot 1's
    per-scenario values J_{1,1} are averaged and divided by K.
    """
    from .policies import DpTablePolicy

    K = config.slots
    grid = config.grid
    search = config.search
    relay = config.links.relay
    if scenarios is None:
        scenarios = ScenarioSet.draw(IidSampler(config.links), K, config.n_scenarios, config.seed, SOLVER_STREAM)
    elif scenarios.order != 0:
        raise ConfigError("the solver only handles i.i.d. slots (Markov order 0)")
    if scenarios.slots != K or scenarios.n != config.n_scenarios:
        raise ConfigError("scenario set does not match the solver config")
    g = grid.size
    phase1 = np.zeros((K - 1, g, g))
    phase2 = np.zeros((K - 1, g))
    sat1 = np.zeros((K - 1, g, g), dtype=bool)
    sat2 = np.zeros((K - 1, g), dtype=bool)
    if K >= 2:
        j1, j2, s1, s2 = terminal_tables(scenarios.slot(K), grid, config.value_cap)
        phase1[K - 2], phase2[K - 2], sat1[K - 2], sat2[K - 2] = j1, j2, s1, s2
        for k in range(K - 1, 1, -1):
            snrs = scenarios.slot(k)
            nj1, nj2 = phase1[k - 1], phase2[k - 1]
            p2 = bellman_step_phase2(snrs, nj2, grid, search, keep=False)
            p1 = bellman_step_phase1(snrs, nj1, nj2, grid, search, relay=relay, keep=False)
            phase2[k - 2], sat2[k - 2] = _cap(p2.mean, config.value_cap)
            phase1[k - 2], sat1[k - 2] = _cap(p1.mean, config.value_cap)
    table = ValueTable(config, phase1, phase2, sat1, sat2, np.empty(0), np.empty(0), np.empty(0, dtype=bool))
    msg = config.message
    v, r, sw, _ = evaluate_states(table, 1, 1, msg, msg, scenarios.slot(1))
    table.slot1_values, table.slot1_rates, table.slot1_switch = v, r, sw
    return SolveResult(table, DpTablePolicy(table), table.nmese, table.nmese_stderr, scenarios)


def with_overrides(config: SolverConfig, **kw) -> SolverConfig:
    return replace(config, **kw)
