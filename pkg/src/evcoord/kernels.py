"""Hot numeric kernels.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorized numpy version. The public names at the bottom of the module bind to
one or the other depending on :data:`evcoord._accel.USE_NUMBA`. Both versions
take and return plain float arrays so they are interchangeable.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# Two objective values closer than this are treated as a tie (then the larger
# charging power wins).
TIE_TOL = 1e-15


# ---------------------------------------------------------------------------
# power injections and polar Jacobian
# ---------------------------------------------------------------------------

@njit
def _injections_loops(g, b, vm, va):
    n = vm.shape[0]
    p = np.zeros(n)
    q = np.zeros(n)
    for i in range(n):
        for j in range(n):
            if g[i, j] == 0.0 and b[i, j] == 0.0:
                continue
            d = va[i] - va[j]
            c = np.cos(d)
            s = np.sin(d)
            p[i] += vm[i] * vm[j] * (g[i, j] * c + b[i, j] * s)
            q[i] += vm[i] * vm[j] * (g[i, j] * s - b[i, j] * c)
    return p, q


def _injections_numpy(g, b, vm, va):
    v = vm * np.exp(1j * va)
    s = v * np.conj((g + 1j * b) @ v)
    return s.real.copy(), s.imag.copy()


@njit
def _jacobian_loops(g, b, vm, va, pq):
    """Rows [P(pq); Q(pq)], columns [angle(pq); magnitude(pq)]."""
    m = pq.shape[0]
    p, q = _injections_loops(g, b, vm, va)
    jac = np.zeros((2 * m, 2 * m))
    for a in range(m):
        i = pq[a]
        for k in range(m):
            j = pq[k]
            if i == j:
                jac[a, k] = -q[i] - b[i, i] * vm[i] * vm[i]
                jac[a, m + k] = p[i] / vm[i] + g[i, i] * vm[i]
                jac[m + a, k] = p[i] - g[i, i] * vm[i] * vm[i]
                jac[m + a, m + k] = q[i] / vm[i] - b[i, i] * vm[i]
            else:
                if g[i, j] == 0.0 and b[i, j] == 0.0:
                    continue
                d = va[i] - va[j]
                c = np.cos(d)
                s = np.sin(d)
                t_cos = g[i, j] * c + b[i, j] * s
                t_sin = g[i, j] * s - b[i, j] * c
                jac[a, k] = vm[i] * vm[j] * t_sin
                jac[a, m + k] = vm[i] * t_cos
                jac[m + a, k] = -vm[i] * vm[j] * t_cos
                jac[m + a, m + k] = vm[i] * t_sin
    return jac


def _jacobian_numpy(g, b, vm, va, pq):
    # complex-derivative form: dS/dVa, dS/dVm
    y = g + 1j * b
    v = vm * np.exp(1j * va)
    ibus = y @ v
    diag_v = np.diag(v)
    ds_dva = 1j * diag_v @ np.conj(np.diag(ibus) - y @ diag_v)
    ds_dvm = diag_v @ np.conj(y @ np.diag(v / vm)) + np.diag(np.conj(ibus) * v / vm)
    sel = np.ix_(pq, pq)
    a = ds_dva[sel]
    m = ds_dvm[sel]
    return np.block([[a.real, m.real], [a.imag, m.imag]])


# ---------------------------------------------------------------------------
# best responses
#
# A vehicle's objective as a function of its own power p is
#     f(p) = sum_k pen(base_k + slope_k * p)
# where pen is the band penalty. For the quadratic penalty f is a convex
# piecewise quadratic with at most two breakpoints per pilot node.
# ---------------------------------------------------------------------------

@njit
def _hinge_sq_loops(base, slope, v_lo, v_hi, p):
    total = 0.0
    for k in range(base.shape[0]):
        v = base[k] + slope[k] * p
        if v < v_lo:
            total += (v - v_lo) * (v - v_lo)
        elif v > v_hi:
            total += (v - v_hi) * (v - v_hi)
    return total


@njit
def _quadratic_br_loops(base, slope, v_lo, v_hi, p_lo, p_hi):
    n = base.shape[0]
    if p_hi <= p_lo:
        return p_lo
    pts = np.empty(2 * n + 2)
    npts = 0
    pts[npts] = p_lo
    npts += 1
    pts[npts] = p_hi
    npts += 1
    for k in range(n):
        if slope[k] != 0.0:
            for edge in (v_lo, v_hi):
                t = (edge - base[k]) / slope[k]
                if p_lo < t < p_hi:
                    pts[npts] = t
                    npts += 1
    pts = np.sort(pts[:npts])
    cand = np.empty(2 * npts)
    nc = 0
    for r in range(npts):
        cand[nc] = pts[r]
        nc += 1
    for r in range(npts - 1):
        a = pts[r]
        c = pts[r + 1]
        if c <= a:
            continue
        mid = 0.5 * (a + c)
        w_sum = 0.0
        wt_sum = 0.0
        for k in range(n):
            v = base[k] + slope[k] * mid
            if v < v_lo:
                w = slope[k] * slope[k]
                w_sum += w
                wt_sum += w * (v_lo - base[k]) / slope[k]
            elif v > v_hi:
                w = slope[k] * slope[k]
                w_sum += w
                wt_sum += w * (v_hi - base[k]) / slope[k]
        if w_sum > 0.0:
            x = wt_sum / w_sum
            if a < x < c:
                cand[nc] = x
                nc += 1
    best_p = p_lo
    best_f = np.inf
    for r in range(nc):
        f = _hinge_sq_loops(base, slope, v_lo, v_hi, cand[r])
        if f < best_f - TIE_TOL:
            best_f = f
            best_p = cand[r]
        elif f <= best_f + TIE_TOL and cand[r] > best_p:
            if f < best_f:
                best_f = f
            best_p = cand[r]
    return best_p


def _hinge_sq_numpy(base, slope, v_lo, v_hi, p):
    v = base[None, :] + np.outer(np.atleast_1d(p), slope)
    under = np.minimum(v - v_lo, 0.0)
    over = np.maximum(v - v_hi, 0.0)
    return (under * under + over * over).sum(axis=1)


def _pick(cand, f):
    """Lowest objective; ties (within TIE_TOL) go to the largest power."""
    fmin = f.min()
    ok = f <= fmin + TIE_TOL
    return float(cand[ok].max())


def _quadratic_br_numpy(base, slope, v_lo, v_hi, p_lo, p_hi):
    if p_hi <= p_lo:
        return p_lo
    nz = slope != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.concatenate(((v_lo - base[nz]) / slope[nz], (v_hi - base[nz]) / slope[nz]))
    t = t[(t > p_lo) & (t < p_hi)]
    pts = np.sort(np.concatenate(([p_lo, p_hi], t)))
    a, c = pts[:-1], pts[1:]
    keep = c > a
    a, c = a[keep], c[keep]
    mid = 0.5 * (a + c)
    v_mid = base[None, :] + np.outer(mid, slope)
    under = v_mid < v_lo
    over = v_mid > v_hi
    w = np.where(under | over, slope * slope, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        target = np.where(under, (v_lo - base) / slope, (v_hi - base) / slope)
        target = np.where(under | over, target, 0.0)
        w_sum = w.sum(axis=1)
        x = (w * target).sum(axis=1) / w_sum
    inner = (w_sum > 0.0) & (x > a) & (x < c)
    cand = np.concatenate((pts, x[inner]))
    return _pick(cand, _hinge_sq_numpy(base, slope, v_lo, v_hi, cand))


@njit
def _crenel_br_loops(base, slope, v_lo, v_hi, p_lo, p_hi, n_grid):
    if p_hi <= p_lo or n_grid < 2:
        return p_lo
    best_p = p_lo
    best_f = np.inf
    step = (p_hi - p_lo) / (n_grid - 1)
    for r in range(n_grid):
        p = p_hi if r == n_grid - 1 else p_lo + step * r
        f = 0.0
        for k in range(base.shape[0]):
            v = base[k] + slope[k] * p
            if v < v_lo or v > v_hi:
                f += 1.0
        # grid is ascending, so <= keeps the largest power among ties
        if f <= best_f:
            best_f = f
            best_p = p
    return best_p


def _crenel_br_numpy(base, slope, v_lo, v_hi, p_lo, p_hi, n_grid):
    if p_hi <= p_lo or n_grid < 2:
        return p_lo
    step = (p_hi - p_lo) / (n_grid - 1)
    grid = p_lo + step * np.arange(n_grid)
    grid[-1] = p_hi
    v = base[None, :] + np.outer(grid, slope)
    f = ((v < v_lo) | (v > v_hi)).sum(axis=1).astype(float)
    return _pick(grid, f)


if USE_NUMBA:
    injections = _injections_loops
    polar_jacobian = _jacobian_loops
    quadratic_best_response = _quadratic_br_loops
    crenel_best_response = _crenel_br_loops
    BACKEND = "numba"
else:
    injections = _injections_numpy
    polar_jacobian = _jacobian_numpy
    quadratic_best_response = _quadratic_br_numpy
    crenel_best_response = _crenel_br_numpy
    BACKEND = "numpy"
