"""Compiled inner loops of the Bellman recursion and of the table policy.

Value tables live on a uniform residual grid ``x_i = i * step``. Phase-1
tables are indexed ``[relay_idx, dest_idx]``; row 0 holds the one-sided limit
relay_needed -> 0+ (the relay is one nat-fraction short of decoding), which
is what the stay branch approaches. Continuations are read by linear (or
nearest) interpolation, clipped to the grid.

Every grid point's scenario average is a sequential sum in scenario order, so
results do not depend on the number of threads.
"""

import math
import os

# the bundled TBB is too old for numba; use OpenMP unless the user chose
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np  # noqa: E402
from numba import njit, prange  # noqa: E402

LINEAR = 0
NEAREST = 1

SINGLE = 0  # expm1(R)/snr + J2(bd - R)
STAY = 1  # expm1(R)/snr_sd + J1(br - g(R), bd - R)

INV_GOLDEN = 0.6180339887498949
# SNR floor inside the kernels; a zero SNR would turn the rate
# parametrisation into 0/0.
TINY_SNR = 1e-300


@njit(cache=True, inline="always")
def interp1(tab, x, step, mode):
    n = tab.shape[0] - 1
    if x <= 0.0:
        return tab[0]
    u = x / step
    if u >= n:
        return tab[n]
    if mode == NEAREST:
        return tab[int(u + 0.5)]
    i = int(u)
    t = u - i
    return tab[i] + t * (tab[i + 1] - tab[i])


@njit(cache=True, inline="always")
def interp2(tab, xr, xd, step, mode):
    nr = tab.shape[0] - 1
    nd = tab.shape[1] - 1
    ur = 0.0 if xr <= 0.0 else min(xr / step, float(nr))
    ud = 0.0 if xd <= 0.0 else min(xd / step, float(nd))
    if mode == NEAREST:
        return tab[int(ur + 0.5), int(ud + 0.5)]
    i = min(int(ur), nr - 1) if nr > 0 else 0
    j = min(int(ud), nd - 1) if nd > 0 else 0
    tr = ur - i
    td = ud - j
    i1 = i + 1 if nr > 0 else 0
    j1 = j + 1 if nd > 0 else 0
    a = tab[i, j] + td * (tab[i, j1] - tab[i, j])
    b = tab[i1, j] + td * (tab[i1, j1] - tab[i1, j])
    return a + tr * (b - a)


@njit(cache=True, inline="always")
def objective(kind, r, snr, ratio, br, bd, j1, j2, step, mode):
    e = math.expm1(r)
    if kind == SINGLE:
        return e / snr + interp1(j2, bd - r, step, mode)
    return e / snr + interp2(j1, br - math.log1p(e * ratio), bd - r, step, mode)


@njit(cache=True)
def minimize(kind, snr, ratio, br, bd, j1, j2, step, mode, lo, hi, n_scan, n_refine):
    """Coarse scan of [lo, hi] then golden-section refinement around the best
    scan point. Returns (f_min, r_min); never worse than the best scan point."""
    if not hi > lo:
        return objective(kind, lo, snr, ratio, br, bd, j1, j2, step, mode), lo
    h = (hi - lo) / n_scan
    best_f = math.inf
    best_i = 0
    for i in range(n_scan + 1):
        x = hi if i == n_scan else lo + i * h
        f = objective(kind, x, snr, ratio, br, bd, j1, j2, step, mode)
        if f < best_f:
            best_f = f
            best_i = i
    best_x = hi if best_i == n_scan else lo + best_i * h
    if n_refine <= 0:
        return best_f, best_x
    a = lo + max(best_i - 1, 0) * h
    b = min(lo + (best_i + 1) * h, hi)
    c = b - INV_GOLDEN * (b - a)
    d = a + INV_GOLDEN * (b - a)
    fc = objective(kind, c, snr, ratio, br, bd, j1, j2, step, mode)
    fd = objective(kind, d, snr, ratio, br, bd, j1, j2, step, mode)
    for _ in range(n_refine):
        if fc < fd:
            b = d
            d = c
            fd = fc
            c = b - INV_GOLDEN * (b - a)
            fc = objective(kind, c, snr, ratio, br, bd, j1, j2, step, mode)
        else:
            a = c
            c = d
            fc = fd
            d = a + INV_GOLDEN * (b - a)
            fd = objective(kind, d, snr, ratio, br, bd, j1, j2, step, mode)
    if fc < best_f:
        best_f = fc
        best_x = c
    if fd < best_f:
        best_f = fd
        best_x = d
    return best_f, best_x


@njit(cache=True)
def relay_threshold(br, sd, sr):
    """Destination rate at which the relay finishes decoding this slot."""
    if sr <= 0.0:
        return math.inf
    return math.log1p(math.expm1(br) * sd / sr)


@njit(cache=True)
def phase1_choice(sr, sd, br, bd, j1, j2, step, mode, n_scan, n_refine, sw_f, sw_r, convex):
    """Best (value, rate, switched) for one phase-1 state and one SNR draw;
    ``switched`` means the relay decodes in this slot.

    ``sw_f``/``sw_r`` is the unconstrained minimum of the switch objective over
    [0, bd]; with convex continuations the constrained switch minimum over
    [b', bd] is then either that point or b' itself. Pass ``convex=False`` to
    search the switch interval directly.
    """
    if bd <= 0.0:
        return 0.0, 0.0, False
    gsd = max(sd, TINY_SNR)
    rth = relay_threshold(br, gsd, sr)
    bp = min(rth, bd)
    if convex:
        if sw_r >= bp:
            fsw = sw_f
            rsw = sw_r
        else:
            fsw = objective(SINGLE, bp, gsd, 0.0, br, bd, j1, j2, step, mode)
            rsw = bp
    else:
        fsw, rsw = minimize(SINGLE, gsd, 0.0, br, bd, j1, j2, step, mode, bp, bd, n_scan, n_refine)
    ratio = sr / gsd
    fst, rst = minimize(STAY, gsd, ratio, br, bd, j1, j2, step, mode, 0.0, bp, n_scan, n_refine)
    if fsw <= fst:
        # R = bd below the threshold ends the transmission without a switch
        return fsw, rsw, rsw >= rth
    return fst, rst, False


@njit(cache=True, parallel=True)
def phase2_slot(gt, j2, step, mode, n_scan, n_refine, keep, out_j, out_r):
    """Mean over scenarios of J_{k,2} on the dest grid; per-scenario values and
    minimisers go to out_j/out_r when ``keep``."""
    n = gt.shape[0]
    g = j2.shape[0]
    mean = np.empty(g)
    dummy = np.zeros((1, 1))
    for i in prange(g):
        bd = i * step
        acc = 0.0
        for s in range(n):
            f, r = minimize(SINGLE, max(gt[s], TINY_SNR), 0.0, 0.0, bd, dummy, j2, step, mode, 0.0, bd, n_scan, n_refine)
            acc += f
            if keep:
                out_j[s, i] = f
                out_r[s, i] = r
        mean[i] = acc / n
    return mean


@njit(cache=True, parallel=True)
def switch_unconstrained(sd, j2, step, mode, n_scan, n_refine):
    n = sd.shape[0]
    g = j2.shape[0]
    sw_f = np.empty((n, g))
    sw_r = np.empty((n, g))
    dummy = np.zeros((1, 1))
    for i in prange(g):
        bd = i * step
        for s in range(n):
            f, r = minimize(SINGLE, max(sd[s], TINY_SNR), 0.0, 0.0, bd, dummy, j2, step, mode, 0.0, bd, n_scan, n_refine)
            sw_f[s, i] = f
            sw_r[s, i] = r
    return sw_f, sw_r


@njit(cache=True, parallel=True)
def phase1_slot(sr, sd, j1, j2, step, mode, n_scan, n_refine, relay_on, keep, out_j, out_r, out_sw):
    """Mean over scenarios of J_{k,1} on the (relay, dest) grid.

    Without a relay the relay residual never moves, so one row is solved and
    broadcast.
    """
    n = sd.shape[0]
    g = j2.shape[0]
    convex = mode == LINEAR
    sw_f, sw_r = switch_unconstrained(sd, j2, step, mode, n_scan, n_refine)
    mean = np.empty((g, g))
    rows = g if relay_on else 1
    for idx in prange(rows * g):
        l = idx // g if relay_on else g - 1
        i = idx % g
        br = l * step
        bd = i * step
        acc = 0.0
        for s in range(n):
            f, r, sw = phase1_choice(sr[s], sd[s], br, bd, j1, j2, step, mode, n_scan, n_refine, sw_f[s, i], sw_r[s, i], convex)
            acc += f
            if keep:
                out_j[s, l, i] = f
                out_r[s, l, i] = r
                out_sw[s, l, i] = sw
        mean[l, i] = acc / n
    if not relay_on:
        for l in range(g - 1):
            mean[l, :] = mean[g - 1, :]
    return mean


@njit(cache=True)
def decide(last, phase, br, bd, sr, sd, rd, j1, j2, step, mode, n_scan, n_refine):
    """Optimal (value, rate, switched, power) for one state and SNR triple.

    ``j1``/``j2`` are the next slot's mean tables (unused when ``last``).
    """
    if bd <= 0.0:
        return 0.0, 0.0, False, 0.0
    if phase == 2:
        gt = max(max(sd, rd), TINY_SNR)
        if last:
            p = math.expm1(bd) / gt
            return p, bd, False, p
        f, r = minimize(SINGLE, gt, 0.0, br, bd, j1, j2, step, mode, 0.0, bd, n_scan, n_refine)
        return f, r, False, math.expm1(r) / gt
    gsd = max(sd, TINY_SNR)
    if last:
        p = math.expm1(bd) / gsd
        return p, bd, False, p
    f0, r0 = minimize(SINGLE, gsd, 0.0, br, bd, j1, j2, step, mode, 0.0, bd, n_scan, n_refine)
    f, r, sw = phase1_choice(sr, sd, br, bd, j1, j2, step, mode, n_scan, n_refine, f0, r0, mode == LINEAR)
    p = math.expm1(r) / gsd
    if sw and sr > 0.0 and r >= relay_threshold(br, gsd, sr):
        p = max(p, math.expm1(br) / sr)
    return f, r, sw, p


@njit(cache=True, parallel=True)
def decide_batch(last, phase, br, bd, sr, sd, rd, j1, j2, step, mode, n_scan, n_refine):
    n = bd.shape[0]
    value = np.empty(n)
    rate = np.empty(n)
    switched = np.empty(n, dtype=np.bool_)
    power = np.empty(n)
    for t in prange(n):
        value[t], rate[t], switched[t], power[t] = decide(
            last, phase[t], br[t], bd[t], sr[t], sd[t], rd[t], j1, j2, step, mode, n_scan, n_refine
        )
    return value, rate, switched, power
