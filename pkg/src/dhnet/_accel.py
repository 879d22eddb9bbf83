"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``DHNET_DISABLE_NUMBA`` is unset or ``0``.  Both implementations are
importable under explicit names so tests and the benchmark can compare them.
"""

import math
import os

import numpy as np

COLEBROOK_A = 2.52
COLEBROOK_B = 3.71
COLEBROOK_MAXITER = 100
COLEBROOK_XTOL = 1e-12

_LOG10E2 = 2.0 / math.log(10.0)


def _numba_requested():
    flag = os.environ.get("DHNET_DISABLE_NUMBA", "0").strip().lower()
    return flag in ("", "0", "false", "no")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by DHNET_DISABLE_NUMBA")
    import numba as nb

    HAVE_NUMBA = True
except ImportError:
    nb = None
    HAVE_NUMBA = False


# -- Colebrook-White ---------------------------------------------------------
#
# Unknown x = 1/sqrt(lambda); fixed point x = F(x) with
#   F(x) = -2 log10(2.52 x / Re + r / 3.71).
# F is decreasing, so x - F(x) is increasing and bisection brackets are easy.


def colebrook_numpy(re, rel_rough):
    """Vectorised Colebrook-White solve.

    Returns ``(lam, residual, iterations)`` where ``residual`` is the absolute
    residual of the defining equation in the ``1/sqrt(lambda)`` form.
    """
    re = np.asarray(re, dtype=float)
    r = np.broadcast_to(np.asarray(rel_rough, dtype=float), re.shape)
    # Smooth-pipe style initial guess, clipped to a sane range.
    x = np.clip(2.0 * np.log10(np.maximum(re, 1.0)) - 0.8, 2.0, 40.0)
    iters = np.zeros(re.shape, dtype=np.int64)
    done = np.zeros(re.shape, dtype=bool)
    for it in range(COLEBROOK_MAXITER):
        fx = -2.0 * np.log10(COLEBROOK_A * x / re + r / COLEBROOK_B)
        # Damping only kicks in if the map is not contracting strongly.
        slope = _LOG10E2 * (COLEBROOK_A / re) / (COLEBROOK_A * x / re + r / COLEBROOK_B)
        omega = np.where(slope < 0.5, 1.0, 1.0 / (1.0 + slope))
        xn = np.where(done, x, (1.0 - omega) * x + omega * fx)
        step = np.abs(xn - x)
        iters = np.where(done, iters, it + 1)
        x = xn
        done |= step < COLEBROOK_XTOL * np.maximum(1.0, np.abs(x))
        if done.all():
            break
    if not done.all():
        bad = ~done
        x[bad] = _colebrook_bisect_numpy(re[bad], r[bad])
    res = np.abs(x + 2.0 * np.log10(COLEBROOK_A * x / re + r / COLEBROOK_B))
    return 1.0 / (x * x), res, iters


def _colebrook_bisect_numpy(re, r):
    lo = np.full(re.shape, 1e-3)
    hi = np.full(re.shape, 1e3)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = mid + 2.0 * np.log10(COLEBROOK_A * mid / re + r / COLEBROOK_B)
        pos = g > 0.0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    return 0.5 * (lo + hi)


# -- Upwind finite-volume assembly ------------------------------------------
#
# Per pipe p (cells in orientation order, global offset off[p], count n[p]):
#   rate[p]   = |v_p| / dx_p
#   fwd[p]    = flow along the arc orientation
# Per node k, CSR lists of inflowing pipes with the global index of the cell
# that touches k and the mixing weight |q_b| / D_k, plus boundary weights for
# the two inputs (depot injection, consumer return).


def upwind_triplets_numpy(off, n, rate, fwd, up_node, ptr, in_cell, in_w, bw):
    """COO triplets of A and dense B for the upwind network stencil."""
    off = np.asarray(off, dtype=np.int64)
    n = np.asarray(n, dtype=np.int64)
    kappa = int(off[-1] + n[-1]) if len(n) else 0
    rows, cols, vals = [], [], []

    cell = np.arange(kappa)
    pipe_of = np.repeat(np.arange(len(n)), n)
    rate_c = rate[pipe_of]
    # diagonal
    rows.append(cell)
    cols.append(cell)
    vals.append(-rate_c)
    # within-pipe upstream neighbour
    local = cell - off[pipe_of]
    fwd_c = fwd[pipe_of]
    has_prev = np.where(fwd_c, local > 0, local < n[pipe_of] - 1)
    src = np.where(fwd_c, cell - 1, cell + 1)
    rows.append(cell[has_prev])
    cols.append(src[has_prev])
    vals.append(rate_c[has_prev])

    # first cell (in flow order) reads the upstream node value
    first = np.where(fwd, off, off + n - 1)
    B = np.zeros((kappa, 2))
    counts = ptr[up_node + 1] - ptr[up_node]
    rr = np.repeat(first, counts)
    rp = np.repeat(rate, counts)
    starts = np.cumsum(counts) - counts
    idx = np.repeat(ptr[up_node], counts) + np.arange(counts.sum()) - np.repeat(starts, counts)
    rows.append(rr)
    cols.append(in_cell[idx])
    vals.append(rp * in_w[idx])
    np.add.at(B, first, rate[:, None] * bw[up_node])

    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), B


if HAVE_NUMBA:

    @nb.njit(cache=True)
    def _colebrook_scalar(re, r):
        x = 2.0 * math.log10(max(re, 1.0)) - 0.8
        x = min(max(x, 2.0), 40.0)
        it = 0
        conv = False
        while it < COLEBROOK_MAXITER:
            arg = COLEBROOK_A * x / re + r / COLEBROOK_B
            fx = -2.0 * math.log10(arg)
            slope = _LOG10E2 * (COLEBROOK_A / re) / arg
            omega = 1.0 if slope < 0.5 else 1.0 / (1.0 + slope)
            xn = (1.0 - omega) * x + omega * fx
            it += 1
            step = abs(xn - x)
            x = xn
            if step < COLEBROOK_XTOL * max(1.0, abs(x)):
                conv = True
                break
        if not conv:
            lo = 1e-3
            hi = 1e3
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                g = mid + 2.0 * math.log10(COLEBROOK_A * mid / re + r / COLEBROOK_B)
                if g > 0.0:
                    hi = mid
                else:
                    lo = mid
            x = 0.5 * (lo + hi)
        res = abs(x + 2.0 * math.log10(COLEBROOK_A * x / re + r / COLEBROOK_B))
        return 1.0 / (x * x), res, it

    @nb.njit(cache=True)
    def _colebrook_loop(re, r):
        m = re.shape[0]
        lam = np.empty(m)
        res = np.empty(m)
        its = np.empty(m, dtype=np.int64)
        for i in range(m):
            lam[i], res[i], its[i] = _colebrook_scalar(re[i], r[i])
        return lam, res, its

    def colebrook_numba(re, rel_rough):
        re = np.asarray(re, dtype=float)
        shape = re.shape
        r = np.ascontiguousarray(np.broadcast_to(np.asarray(rel_rough, dtype=float), shape)).ravel()
        lam, res, its = _colebrook_loop(np.ascontiguousarray(re).ravel(), r)
        return lam.reshape(shape), res.reshape(shape), its.reshape(shape)

    @nb.njit(cache=True)
    def _upwind_loop(off, n, rate, fwd, up_node, ptr, in_cell, in_w, bw):
        npipe = n.shape[0]
        kappa = 0
        nnz = 0
        for p in range(npipe):
            kappa += n[p]
            nnz += 2 * n[p] - 1
            k = up_node[p]
            nnz += ptr[k + 1] - ptr[k]
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        B = np.zeros((kappa, 2))
        t = 0
        for p in range(npipe):
            c = rate[p]
            o = off[p]
            for j in range(n[p]):
                i = o + j
                rows[t] = i
                cols[t] = i
                vals[t] = -c
                t += 1
                if fwd[p]:
                    if j > 0:
                        rows[t] = i
                        cols[t] = i - 1
                        vals[t] = c
                        t += 1
                else:
                    if j < n[p] - 1:
                        rows[t] = i
                        cols[t] = i + 1
                        vals[t] = c
                        t += 1
            first = o if fwd[p] else o + n[p] - 1
            k = up_node[p]
            for s in range(ptr[k], ptr[k + 1]):
                rows[t] = first
                cols[t] = in_cell[s]
                vals[t] = c * in_w[s]
                t += 1
            B[first, 0] += c * bw[k, 0]
            B[first, 1] += c * bw[k, 1]
        return rows[:t], cols[:t], vals[:t], B

    def upwind_triplets_numba(off, n, rate, fwd, up_node, ptr, in_cell, in_w, bw):
        return _upwind_loop(
            np.asarray(off, dtype=np.int64),
            np.asarray(n, dtype=np.int64),
            np.asarray(rate, dtype=float),
            np.asarray(fwd, dtype=np.bool_),
            np.asarray(up_node, dtype=np.int64),
            np.asarray(ptr, dtype=np.int64),
            np.asarray(in_cell, dtype=np.int64),
            np.asarray(in_w, dtype=float),
            np.ascontiguousarray(bw, dtype=float),
        )

    colebrook = colebrook_numba
    upwind_triplets = upwind_triplets_numba
else:
    colebrook_numba = None
    upwind_triplets_numba = None
    colebrook = colebrook_numpy
    upwind_triplets = upwind_triplets_numpy

BACKEND = "numba" if HAVE_NUMBA else "numpy"
