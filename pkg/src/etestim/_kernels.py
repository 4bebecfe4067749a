"""Compiled Dormand-Prince segment integrator for linear closed loops.

The right-hand side has the structure ``y' = M y + c`` plus, in the rows of
the trigger variables, ``S ((R y + r) * (W (R y + r)))``.  The step control,
guard test and bisection mirror :func:`etestim.hybrid.integrate_flow`.
"""
import numpy as np
from numba import njit

OK = 0
HIT = 1
FULL = 2
NONFINITE = 3
UNDERFLOW = 4

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.zeros((6, 6))
_A[1, :1] = [1 / 5]
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


@njit(cache=True)
def _rates(y, M, c, R, r, W, S, e0, out):
    D = y.size
    for i in range(D):
        acc = c[i]
        for k in range(D):
            acc += M[i, k] * y[k]
        out[i] = acc
    nu = R.shape[0]
    u = np.empty(nu)
    for i in range(nu):
        acc = r[i]
        for k in range(D):
            acc += R[i, k] * y[k]
        u[i] = acc
    for a in range(S.shape[0]):
        acc = 0.0
        for i in range(nu):
            if S[a, i] != 0.0:
                wu = 0.0
                for k in range(nu):
                    wu += W[i, k] * u[k]
                acc += S[a, i] * u[i] * wu
        out[e0 + a] += acc


@njit(cache=True)
def _step(y, h, k1, K, M, c, R, r, W, S, e0, A, B, E, y_new, err):
    D = y.size
    tmp = np.empty(D)
    for i in range(D):
        K[0, i] = k1[i]
    for s in range(1, 6):
        for i in range(D):
            acc = 0.0
            for q in range(s):
                acc += A[s, q] * K[q, i]
            tmp[i] = y[i] + h * acc
        _rates(tmp, M, c, R, r, W, S, e0, K[s])
    for i in range(D):
        acc = 0.0
        for q in range(6):
            acc += B[q] * K[q, i]
        y_new[i] = y[i] + h * acc
    _rates(y_new, M, c, R, r, W, S, e0, K[6])
    for i in range(D):
        acc = 0.0
        for q in range(7):
            acc += E[q] * K[q, i]
        err[i] = h * acc


@njit(cache=True)
def _guards(y, t0i, e0, thr, etm, eta_thr, g):
    for a in range(thr.size):
        gi = y[t0i + a] - thr[a]
        if etm[a]:
            ge = eta_thr - y[e0 + a]
            if ge < gi:
                gi = ge
        g[a] = gi


@njit(cache=True)
def segment(
    y0, t0, t1, h0, M, c, R, r, W, S, t0i, e0, thr, etm, eta_thr,
    atol, rtol, max_step, event_time, guard_value, ts, ys,
):
    """Integrate until ``t1``, a guard crossing or the buffers fill up.

    Returns ``(status, count, h_next, fired)``; the accepted points are
    ``ts[:count]``, ``ys[:count]`` with the entry point first.
    """
    D = y0.size
    N = thr.size
    A, B, E = _A, _B, _E
    K = np.empty((7, D))
    y = y0.copy()
    y_new = np.empty(D)
    err = np.empty(D)
    k1 = np.empty(D)
    g = np.empty(N)
    g_new = np.empty(N)
    armed = np.zeros(N, dtype=np.bool_)
    fired = np.zeros(N, dtype=np.bool_)
    cap = ts.size
    ts[0] = t0
    ys[0] = y
    count = 1
    _rates(y, M, c, R, r, W, S, e0, k1)
    for i in range(D):
        if not np.isfinite(k1[i]):
            return NONFINITE, count, h0, fired
    _guards(y, t0i, e0, thr, etm, eta_thr, g)
    for a in range(N):
        armed[a] = g[a] < 0.0
    h = min(h0, max_step)
    t = t0
    while t < t1:
        if count >= cap:
            return FULL, count, h, fired
        last = h >= t1 - t
        hs = t1 - t if last else h
        _step(y, hs, k1, K, M, c, R, r, W, S, e0, A, B, E, y_new, err)
        errn = 0.0
        for i in range(D):
            sc = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            v = abs(err[i]) / sc
            if not v <= errn:
                errn = v
        if not errn <= 1.0:
            if not np.isfinite(errn):
                return NONFINITE, count, h, fired
            h = hs * max(0.2, 0.9 * errn ** -0.2)
            if h < 1e-14 * max(1.0, abs(t)):
                return UNDERFLOW, count, h, fired
            continue
        t_new = t1 if last else t + hs
        _guards(y_new, t0i, e0, thr, etm, eta_thr, g_new)
        any_fired = False
        for a in range(N):
            if armed[a] and g_new[a] >= 0.0:
                any_fired = True
        if any_fired:
            lo, hi = 0.0, t_new - t
            floor = 4 * 2.220446049250313e-16 * max(1.0, abs(t))
            y_mid = np.empty(D)
            g_mid = np.empty(N)
            K2 = np.empty((7, D))
            err2 = np.empty(D)
            while hi - lo > floor:
                if hi - lo <= event_time:
                    gmax = -np.inf
                    for a in range(N):
                        if armed[a] and g_new[a] >= 0.0 and g_new[a] > gmax:
                            gmax = g_new[a]
                    if gmax <= guard_value:
                        break
                mid = 0.5 * (lo + hi)
                _step(y, mid, k1, K2, M, c, R, r, W, S, e0, A, B, E, y_mid, err2)
                _guards(y_mid, t0i, e0, thr, etm, eta_thr, g_mid)
                hit = False
                for a in range(N):
                    if armed[a] and g_mid[a] >= 0.0:
                        hit = True
                if hit:
                    hi = mid
                    y_new[:] = y_mid
                    g_new[:] = g_mid
                else:
                    lo = mid
            for a in range(N):
                fired[a] = armed[a] and g_new[a] >= 0.0
            ts[count] = t1 if (last and hi == t_new - t) else t + hi
            ys[count] = y_new
            return HIT, count + 1, h, fired
        grow = 5.0 if errn == 0.0 else min(5.0, 0.9 * errn ** -0.2)
        t = t_new
        y[:] = y_new
        k1[:] = K[6]
        ts[count] = t
        ys[count] = y
        count += 1
        for a in range(N):
            if g_new[a] < 0.0:
                armed[a] = True
        h = min(max(h, hs * grow) if last else hs * grow, max_step)
    return OK, count, h, fired


@njit(cache=True)
def segment_batch(
    y0, t0, t_lim, h0, k0, dwell, noise, M, c, R, W, S, t0i, e0, thr, etm, eta_thr,
    atol, rtol, max_step, event_time, guard_value, ts, ys,
):
    """Run :func:`segment` over consecutive noise intervals ``k0, k0+1, ...``.

    ``noise[j]`` is the sample on ``[(k0+j) dwell, (k0+j+1) dwell)``.  Stops
    at ``t_lim``, at a guard crossing, when the buffers fill up or when the
    noise rows run out.  Returns ``(status, count, h_next, fired)``.
    """
    m = noise.shape[1]
    r = np.empty(2 * m)
    y = y0.copy()
    t = t0
    h = h0
    count = 1
    ts[0] = t0
    ys[0] = y0
    fired = np.zeros(thr.size, dtype=np.bool_)
    for j in range(noise.shape[0]):
        t1 = min((k0 + j + 1) * dwell, t_lim)
        for i in range(m):
            r[i] = -noise[j, i]
            r[m + i] = -noise[j, i]
        if ts.size - count < 2:
            return FULL, count, h, fired
        # the entry point of each interval overwrites the identical last point
        status, cnt, h, fired = segment(
            y, t, t1, h, M, c, R, r, W, S, t0i, e0, thr, etm, eta_thr,
            atol, rtol, max_step, event_time, guard_value, ts[count - 1:], ys[count - 1:],
        )
        count += cnt - 1
        if status != OK or t1 >= t_lim:
            return status, count, h, fired
        t = t1
        y[:] = ys[count - 1]
    return OK, count, h, fired
