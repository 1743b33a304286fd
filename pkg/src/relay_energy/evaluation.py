"""Forward Monte Carlo rollouts of a policy and NMESE sweeps.

Trials run as vectors, one slot at a time. Slot k's SNRs come from the
evaluation stream with a sub-stream per (slot, link), so every policy
evaluated with the same seed sees the same channel realisations (common
random numbers), and a no-relay policy sees the same sd/rd draws as its
relay counterpart.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import EVAL_STREAM, LinkDistributions
from .errors import ConfigError, SimulationError
from .info import INFO_TOL, Phase
from .policies import Policy

MAX_ABORT_FRACTION = 1e-3
CSV_HEADER = ("rate", "K", "policy", "trunc", "nmese", "nmese_db", "stderr", "trials", "seed")


@dataclass
class TrajectoryRecord:
    """One rollout. Per-slot arrays have length K; unused slots hold zeros."""

    phase: np.ndarray
    snr: np.ndarray  # (K, 3)
    power: np.ndarray
    dest_increment: np.ndarray
    relay_increment: np.ndarray
    energy: float
    switch_slot: int | None
    termination_slot: int | None
    aborted: bool = False


@dataclass
class SimulationResult:
    nmese: float
    stderr: float
    n_trials: int
    aborted: int
    deadline_misses: int
    energies: np.ndarray = field(repr=False)
    trajectories: list[TrajectoryRecord] = field(default_factory=list, repr=False)

    @property
    def nmese_db(self) -> float:
        return to_db(self.nmese)

    @property
    def mean_energy(self) -> float:
        return self.energies.mean() if self.energies.size else math.nan

    @property
    def energy_stderr(self) -> float:
        n = self.energies.size
        return float(self.energies.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0


def to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def _stats(values: np.ndarray) -> tuple[float, float]:
    # fsum is exact, so the mean does not depend on any reduction order
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def simulate(
    policy: Policy,
    links: LinkDistributions,
    slots: int,
    rate: float,
    n_trials: int = 100_000,
    seed: int = 0,
    keep: int = 10,
    message: float | None = None,
) -> SimulationResult:
    """Roll ``policy`` out over ``n_trials`` independent channel sequences.

    The destination must collect ``message`` nats (default ``slots * rate``)
    within ``slots`` slots. Trials where the policy returns a non-finite or
    negative power are aborted; more than 0.1% aborted trials raise
    ``SimulationError``. Returns NMESE = mean energy / K with its standard error
    over the completed trials.
    """
    if slots < 1 or not rate > 0 or n_trials < 1:
        raise ConfigError("need slots >= 1, rate > 0 and n_trials >= 1")
    if not policy.relay:
        links = links.without_relay()
    b = slots * rate if message is None else message
    br = np.full(n_trials, b)
    bd = np.full(n_trials, b)
    energy = np.zeros(n_trials)
    aborted = np.zeros(n_trials, dtype=bool)
    m = min(keep, n_trials)
    rec_phase = np.zeros((m, slots), dtype=np.int64)
    rec_snr = np.zeros((m, slots, 3))
    rec_power = np.zeros((m, slots))
    rec_dd = np.zeros((m, slots))
    rec_dr = np.zeros((m, slots))
    switch_slot = np.zeros(n_trials, dtype=np.int64)
    end_slot = np.zeros(n_trials, dtype=np.int64)
    for k in range(1, slots + 1):
        snrs = links.draw(seed, EVAL_STREAM, k, n_trials)
        phase = np.where(br <= INFO_TOL, int(Phase.PHASE2), int(Phase.PHASE1))
        active = (bd > INFO_TOL) & ~aborted
        idx = np.flatnonzero(active)
        p = np.zeros(n_trials)
        if idx.size:
            p[idx] = policy.power_batch(k, slots, phase[idx], br[idx], bd[idx], snrs[idx])
        bad = active & ~(np.isfinite(p) & (p >= 0))
        aborted |= bad
        p[~active | bad] = 0.0
        gain_d = np.where(phase == Phase.PHASE2, np.maximum(snrs[:, 1], snrs[:, 2]), snrs[:, 1])
        dd = np.log1p(p * gain_d)
        dr = np.where(phase == Phase.PHASE1, np.log1p(p * snrs[:, 0]), 0.0)
        bd = bd - dd
        br = br - dr
        energy += p
        switch_slot[(switch_slot == 0) & active & (phase == Phase.PHASE1) & (br <= INFO_TOL) & (bd > INFO_TOL)] = k
        end_slot[(end_slot == 0) & active & (bd <= INFO_TOL)] = k
        rec_phase[:, k - 1] = np.where(active[:m], phase[:m], int(Phase.TERMINATED))
        rec_snr[:, k - 1] = snrs[:m]
        rec_power[:, k - 1] = p[:m]
        rec_dd[:, k - 1] = dd[:m]
        rec_dr[:, k - 1] = dr[:m]
    n_abort = int(aborted.sum())
    if n_abort > MAX_ABORT_FRACTION * n_trials:
        raise SimulationError(f"{n_abort} of {n_trials} trajectories aborted (policy {policy.name})")
    done = ~aborted
    misses = int(np.sum(done & (bd > INFO_TOL)))
    e = energy[done]
    mean, se = _stats(e)
    records = [
        TrajectoryRecord(
            rec_phase[i], rec_snr[i], rec_power[i], rec_dd[i], rec_dr[i], float(energy[i]),
            int(switch_slot[i]) or None, int(end_slot[i]) or None, bool(aborted[i]),
        )
        for i in range(m)
    ]
    return SimulationResult(mean / slots, se / slots, n_trials, n_abort, misses, e, records)


@dataclass
class SweepRow:
    rate: float
    K: int
    policy: str
    trunc: float
    nmese: float
    nmese_db: float
    stderr: float
    trials: int
    seed: int

    def as_tuple(self):
        return (self.rate, self.K, self.policy, self.trunc, self.nmese, self.nmese_db, self.stderr, self.trials, self.seed)


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_tuple()])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> SweepResult:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([
            SweepRow(float(r["rate"]), int(r["K"]), r["policy"], float(r["trunc"]), float(r["nmese"]),
                     float(r["nmese_db"]), float(r["stderr"]), int(r["trials"]), int(r["seed"]))
            for r in rows
        ])

    def select(self, **kw) -> list[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]


def sweep(
    rates,
    slots_list,
    policies,
    links: LinkDistributions,
    n_trials: int = 100_000,
    seed: int = 0,
    solver_opts: dict | None = None,
    trunc: float | None = None,
) -> SweepResult:
    """Evaluate every (rate, K, policy) combination.

    ``policies`` holds policy kind names. DP kinds are solved per (rate, K)
    with ``solver_opts`` passed to ``SolverConfig``; all policies at a given
    (rate, K) share the evaluation seed. Policies that do not apply to a K
    (two-slot-only baselines) are skipped.
    """
    from .dp import SolverConfig, solve
    from .policies import PolicyKind, make_policy

    rates, slots_list, policies = list(rates), list(slots_list), [PolicyKind(p) for p in policies]
    if not (rates and slots_list and policies):
        raise ConfigError("sweep needs non-empty rates, K values and policies")
    if trunc is None:
        trunc = links.sd.trunc
    opts = dict(solver_opts or {})
    out = SweepResult()
    for rate in rates:
        for K in slots_list:
            tables = {}
            for kind in policies:
                if kind in (PolicyKind.HEURISTIC_2SLOT, PolicyKind.NAIVE_RELAY_FIRST) and K != 2:
                    continue
                table = None
                if kind in (PolicyKind.DP_TABLE, PolicyKind.NO_RELAY_DP_TABLE):
                    relay = kind is PolicyKind.DP_TABLE and links.relay
                    if relay not in tables:
                        L = links if relay else links.without_relay()
                        tables[relay] = solve(SolverConfig(K, rate, L, seed=seed, **opts)).table
                    table = tables[relay]
                policy = make_policy(kind, table=table, level=opts.get("fixed_level", 0.0))
                res = simulate(policy, links, K, rate, n_trials, seed)
                out.rows.append(SweepRow(rate, K, kind.value, trunc, res.nmese, res.nmese_db, res.stderr, n_trials, seed))
    return out
