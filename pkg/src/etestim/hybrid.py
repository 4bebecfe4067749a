"""Deterministic integration of the closed-loop hybrid model.

Flows are integrated with an adaptive Dormand-Prince 5(4) pair.  Guards are
checked after every accepted step and crossings are localized by bisection
(each trial point is a single fresh step from the last accepted state).  The
simulator splits flow into segments at every instant where the right-hand
side is discontinuous: noise updates, disturbance changes and the moment a
node's timer reaches its MIET (where ``omega`` switches).  Jumps follow the
greedy rule: a node transmits as soon as its jump condition holds; several
nodes due at the same instant jump in ascending index order.
"""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .estimation import ErrorCoordinates, ObserverModel, PlantModel, derived_errors, holding_rate
from .triggering import NodeTriggerParams, eta_reset, psi_rate

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


class ModelFault(SimulationError):
    """Non-finite values produced by the model's right-hand side."""


class StepSizeUnderflow(SimulationError):
    """Adaptive step size fell below the representable minimum."""


class ZenoError(SimulationError):
    """More than ``N`` jumps inside a window shorter than the smallest dwell constant."""


@dataclass(frozen=True)
class IntegratorTolerances:
    rtol: float = 1e-8
    atol: float = 1e-10
    event_time: float = 1e-9
    guard_value: float = 1e-12
    # eta at or below this counts as zero in the event-triggered jump condition
    eta_threshold: float = 1e-12
    max_step: float = math.inf
    # minimum spacing of recorded flow samples; 0 records every accepted step
    record_dt: float = 0.0

    def refined(self, factor: float = 0.5) -> "IntegratorTolerances":
        return IntegratorTolerances(
            rtol=self.rtol * factor,
            atol=self.atol * factor,
            event_time=self.event_time * factor,
            guard_value=self.guard_value * factor,
            eta_threshold=self.eta_threshold,
            max_step=self.max_step,
            record_dt=self.record_dt,
        )


@dataclass
class HybridState:
    """Physical coordinates of the closed loop.

    ``yhat`` and ``what`` are concatenated over nodes.  ``z_local`` and
    ``yhat_local`` hold the sensor-side observer copies (one row per node)
    and are only present in redundant-observer mode.
    """

    x: np.ndarray
    z: np.ndarray
    yhat: np.ndarray
    what: np.ndarray
    tau: np.ndarray
    eta: np.ndarray
    z_local: Optional[np.ndarray] = None
    yhat_local: Optional[np.ndarray] = None


class HybridTimePoint(NamedTuple):
    t: float
    j: int


@dataclass(frozen=True)
class EventRecord:
    node: int
    time: float
    jump_index: int
    inter_event_time: float
    eta_before: float
    eta_after: float


class StateLayout:
    """Packing of :class:`HybridState` into one flat vector.

    Order: ``x | z copies | yhat copies | what | tau | eta``.
    """

    def __init__(self, n: int, q: int, m: int, N: int, copies: int = 1):
        self.n, self.q, self.m, self.N, self.copies = n, q, m, N, copies
        o = 0
        self.x = slice(o, o + n)
        o += n
        self.z = slice(o, o + copies * q)
        o += copies * q
        self.yhat = slice(o, o + copies * m)
        o += copies * m
        self.what = slice(o, o + m)
        o += m
        self.tau = slice(o, o + N)
        o += N
        self.eta = slice(o, o + N)
        o += N
        self.size = o

    def column_names(self) -> List[str]:
        """Names of the flat state entries, 1-based as in ``x1``, ``tau2``; observer copy ``c`` is ``zc_k`` (0 remote, i for node i)."""
        names = [f"x{k + 1}" for k in range(self.n)]
        for c in range(self.copies):
            pre = "z" if self.copies == 1 else f"z{c}_"
            names += [f"{pre}{k + 1}" for k in range(self.q)]
        for c in range(self.copies):
            pre = "yhat" if self.copies == 1 else f"yhat{c}_"
            names += [f"{pre}{k + 1}" for k in range(self.m)]
        names += [f"what{k + 1}" for k in range(self.m)]
        names += [f"tau{k + 1}" for k in range(self.N)]
        names += [f"eta{k + 1}" for k in range(self.N)]
        return names

    def pack(self, s: HybridState) -> np.ndarray:
        y = np.empty(self.size)
        y[self.x] = s.x
        y[self.what] = s.what
        y[self.tau] = s.tau
        y[self.eta] = s.eta
        Z = y[self.z].reshape(self.copies, self.q)
        Y = y[self.yhat].reshape(self.copies, self.m)
        Z[0] = s.z
        Y[0] = s.yhat
        if self.copies > 1:
            Z[1:] = s.z if s.z_local is None else s.z_local
            Y[1:] = s.yhat if s.yhat_local is None else s.yhat_local
        y[self.z] = Z.ravel()
        y[self.yhat] = Y.ravel()
        return y

    def unpack(self, y) -> HybridState:
        y = np.asarray(y, dtype=float)
        Z = y[self.z].reshape(self.copies, self.q)
        Y = y[self.yhat].reshape(self.copies, self.m)
        return HybridState(
            x=y[self.x].copy(),
            z=Z[0].copy(),
            yhat=Y[0].copy(),
            what=y[self.what].copy(),
            tau=y[self.tau].copy(),
            eta=y[self.eta].copy(),
            z_local=Z[1:].copy() if self.copies > 1 else None,
            yhat_local=Y[1:].copy() if self.copies > 1 else None,
        )


# Dormand-Prince 5(4)
_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_DP_A = (
    None,
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _dp_step(f, t, y, h, k1):
    K = np.empty((7, y.size))
    K[0] = k1
    # overflow shows up as a non-finite error norm and is reported by the caller
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, 6):
            K[i] = f(t + _DP_C[i] * h, y + h * (_DP_A[i] @ K[:i]))
        y_new = y + h * (_DP_B @ K[:6])
        K[6] = f(t + h, y_new)
        err = h * (_DP_E @ K)
    return y_new, K[6], err


class GuardHit(NamedTuple):
    time: float
    nodes: Tuple[int, ...]


class FlowSegment(NamedTuple):
    t: np.ndarray
    y: np.ndarray
    hit: Optional[GuardHit]
    next_step: float


def _no_guards(t, y):
    return np.empty(0)


def integrate_flow(
    y0,
    rates: Callable,
    guards: Optional[Callable],
    t_span: Tuple[float, float],
    tol: IntegratorTolerances = IntegratorTolerances(),
    h0: Optional[float] = None,
) -> FlowSegment:
    """Integrate ``y' = rates(t, y)`` over ``t_span`` until a guard fires.

    ``guards(t, y)`` returns one value per node; node ``i`` fires where its
    value becomes ``>= 0``.  Guards already nonnegative at entry are ignored.
    The returned segment ends exactly at ``t_span[1]`` or at the localized
    crossing, whichever comes first.

    Raises
    ------
    ModelFault
        If the rates produce NaN or Inf.
    StepSizeUnderflow
        If the step size collapses (non-integrable dynamics).
    """
    guards = guards or _no_guards
    t0, t1 = float(t_span[0]), float(t_span[1])
    y = np.array(y0, dtype=float)
    ts, ys = [t0], [y.copy()]
    if t1 <= t0:
        return FlowSegment(np.array(ts), np.array(ys), None, h0 or tol.max_step)

    k1 = rates(t0, y)
    if not np.isfinite(k1).all():
        raise ModelFault(f"non-finite rates at t={t0}")
    g = guards(t0, y)
    armed = g < 0
    h = min(h0 if h0 else 1e-3 * (t1 - t0) + 1e-12, tol.max_step)
    t = t0
    atol, rtol = tol.atol, tol.rtol

    while t < t1:
        last = h >= t1 - t
        hs = t1 - t if last else h
        y_new, k_new, err = _dp_step(rates, t, y, hs, k1)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        errn = float(np.max(np.abs(err) / scale))
        if not errn <= 1.0:
            if not (np.isfinite(y_new).all() and np.isfinite(errn)):
                raise ModelFault(f"non-finite state or rates near t={t}")
            h = hs * max(0.2, 0.9 * errn**-0.2)
            if h < 1e-14 * max(1.0, abs(t)):
                raise StepSizeUnderflow(f"step size {h:g} collapsed at t={t}")
            continue
        t_new = t1 if last else t + hs
        g_new = guards(t_new, y_new)
        fired = armed & (g_new >= 0)
        if fired.any():
            hit_t, hit_y, nodes = _localize(rates, guards, t, y, k1, t_new - t, y_new, g_new, armed, tol)
            t_hit = t1 if hit_t == t_new - t and last else t + hit_t
            ts.append(t_hit)
            ys.append(hit_y)
            return FlowSegment(np.array(ts), np.array(ys), GuardHit(t_hit, nodes), h)
        grow = 5.0 if errn == 0 else min(5.0, 0.9 * errn**-0.2)
        t, y, k1 = t_new, y_new, k_new
        ts.append(t)
        ys.append(y)
        armed = armed | (g_new < 0)
        # a step shortened to land on t1 does not shrink the proposal
        h = min(max(h, hs * grow) if last else hs * grow, tol.max_step)
    return FlowSegment(np.array(ts), np.array(ys), None, h)


def _localize(rates, guards, t, y, k1, h, y_hi, g_hi, armed, tol):
    lo, hi = 0.0, h
    floor = 4 * np.finfo(float).eps * max(1.0, abs(t))
    while hi - lo > floor:
        fired = armed & (g_hi >= 0)
        if hi - lo <= tol.event_time and np.max(g_hi[fired]) <= tol.guard_value:
            break
        mid = 0.5 * (lo + hi)
        y_mid = _dp_step(rates, t, y, mid, k1)[0]
        g_mid = np.asarray(guards(t + mid, y_mid), dtype=float)
        if np.any(armed & (g_mid >= 0)):
            hi, y_hi, g_hi = mid, y_mid, g_mid
        else:
            lo = mid
    nodes = tuple(int(i) for i in np.flatnonzero(armed & (g_hi >= 0)))
    return hi, y_hi, nodes


class ClosedLoop:
    """Plant, remote observer and ``N`` triggered sensor nodes.

    ``noise`` needs ``dwell`` (``None`` for a constant signal) and
    ``interval_value(k)`` returning the stacked noise vector on
    ``[k dwell, (k+1) dwell)``.  ``disturbance`` needs ``value(t)`` and
    ``next_change(t)``.  Either may be ``None`` for an identically zero signal.

    With ``redundant_observers`` every node integrates its own observer copy
    and evaluates its trigger on that copy; otherwise one shared copy is used.
    """

    def __init__(
        self,
        plant: PlantModel,
        observer: ObserverModel,
        nodes: Sequence[NodeTriggerParams],
        noise=None,
        disturbance=None,
        redundant_observers: bool = False,
        fast: Optional[bool] = None,
    ):
        if len(nodes) != plant.N:
            raise ValueError(f"{len(nodes)} trigger configurations for {plant.N} nodes")
        for i, p in enumerate(nodes):
            if p.dim != plant.output_dims[i]:
                raise ValueError(f"node {i}: Q is {p.dim}x{p.dim} but the output has dimension {plant.output_dims[i]}")
        self.plant = plant
        self.observer = observer
        self.nodes = list(nodes)
        self.noise = noise
        self.disturbance = disturbance
        self.redundant = redundant_observers
        N, m = plant.N, plant.m
        copies = N + 1 if redundant_observers else 1
        self.layout = StateLayout(plant.n, observer.q, m, N, copies)
        self.copy_of_node = np.arange(1, N + 1) if redundant_observers else np.zeros(N, dtype=int)
        self.thresholds = np.array([p.threshold for p in self.nodes])
        self.tau_miet = np.array([p.tau_miet for p in self.nodes])
        self.etm = np.array([p.mode == "event_triggered" for p in self.nodes])
        self.tau_dwell_min = min(p.tau_dwell for p in self.nodes)
        self.eta_threshold = 0.0
        # noise intervals handed to the compiled stepper per call; 0 steps one interval at a time
        self.batch_intervals = 256
        linear = (
            plant.matrices is not None
            and observer.matrices is not None
            and observer.q == plant.n
            and all(p.uses_default_forms for p in self.nodes)
        )
        self.fast = linear if fast is None else (fast and linear)
        if fast and not linear:
            raise ValueError("fast path needs linear plant/observer and default trigger forms")
        if self.fast:
            self._prepare_linear()

    # -- signals -----------------------------------------------------------
    @property
    def dwell(self) -> Optional[float]:
        return None if self.noise is None else self.noise.dwell

    def noise_value(self, k: int) -> np.ndarray:
        if self.noise is None:
            return np.zeros(self.plant.m)
        return np.asarray(self.noise.interval_value(k), dtype=float)

    def noise_at(self, t: float) -> np.ndarray:
        d = self.dwell
        return self.noise_value(0 if not d else int(math.floor(t / d)))

    def disturbance_value(self, t: float) -> np.ndarray:
        if self.disturbance is None:
            return np.zeros(self.plant.p)
        return np.asarray(self.disturbance.value(t), dtype=float)

    def next_disturbance_change(self, t: float) -> float:
        return math.inf if self.disturbance is None else self.disturbance.next_change(t)

    # -- flow --------------------------------------------------------------
    def _prepare_linear(self):
        # Flow of (x, z, yhat, tau) is affine in the state; the eta rates add
        # quadratic forms of the affine signals q and eps_tilde.
        P, O = self.plant.matrices, self.observer.matrices
        A, B, C = P["A"], P["B"], P["C"]
        L = self.layout
        n, m, K, N = L.n, L.m, L.copies, L.N
        ALC = O["A"] + O["L"] @ O["C"]
        CA = C @ A
        D = L.size
        x0 = L.x.start
        M = np.zeros((D, D))
        M[L.x, L.x] = A
        for c in range(K):
            zs = slice(L.z.start + c * n, L.z.start + (c + 1) * n)
            ys = slice(L.yhat.start + c * m, L.yhat.start + (c + 1) * m)
            M[zs, zs] = ALC
            M[zs, ys] = -O["L"]
            M[ys, zs] = CA
        eta0 = L.eta.start
        Q = np.zeros((m, m))
        S = np.zeros((N, 2 * m))
        R = np.zeros((2 * m, D))
        for i, p in enumerate(self.nodes):
            sl = self.plant.node_slice(i)
            c = self.copy_of_node[i]
            if p.mode == "event_triggered":
                M[eta0 + i, eta0 + i] = -p.sigma
                S[i, sl] = 1.0
                S[i, m + sl.start : m + sl.stop] = 1.0
            Q[sl, sl] = p.Q
            for r in range(sl.start, sl.stop):
                # q_i = O_C z_c - C x ;  eps_tilde_i = yhat_c - C x  (noise added per segment)
                R[r, L.z.start + c * n : L.z.start + (c + 1) * n] = O["C"][r]
                R[r, x0 : x0 + L.n] -= C[r]
                R[m + r, L.yhat.start + c * m + r] = 1.0
                R[m + r, x0 : x0 + L.n] -= C[r]
        self._M, self._R, self._S, self._Qblk = M, R, S, Q
        self._ts_buf = np.empty(512)
        self._ys_buf = np.empty((512, D))
        self._tsb_buf = np.empty(4096)
        self._ysb_buf = np.empty((4096, D))
        self._B = B
        self._gb_rows = np.zeros(m)
        self._node_rows = np.zeros(m, dtype=int)
        self._c0 = np.zeros(D)
        self._c0[L.tau] = 1.0
        for i, p in enumerate(self.nodes):
            sl = self.plant.node_slice(i)
            self._gb_rows[sl] = p.gamma_bar * p.beta
            self._node_rows[sl] = i
            if p.mode == "event_triggered":
                self._c0[eta0 + i] = p.s

    def rates_fn(self, w, v, omega) -> Callable:
        """Right-hand side for one segment with fixed noise, disturbance and omega."""
        if self.fast:
            return self._linear_rates(w, v, omega)
        return self._generic_rates(w, v, omega)

    def _linear_terms(self, w, v, omega):
        L = self.layout
        m = L.m
        c = self._c0.copy()
        if self._B.shape[1]:
            c[L.x] += self._B @ v
        r = np.concatenate([-w, -w])
        W = np.zeros((2 * m, 2 * m))
        W[:m, :m] = self._Qblk
        W[m:, m:] = np.diag(-omega[self._node_rows] * self._gb_rows)
        return c, r, W

    def _linear_rates(self, w, v, omega):
        M, R, S = self._M, self._R, self._S
        c, r, W = self._linear_terms(w, v, omega)
        eta = self.layout.eta

        def rates(t, y):
            out = M @ y + c
            u = R @ y + r
            out[eta] += S @ (u * (W @ u))
            return out

        return rates

    def flow(self, y, w, v, omega, t_span, tol: IntegratorTolerances, h0=None) -> FlowSegment:
        """One flow segment with noise ``w``, disturbance ``v`` and ``omega`` held fixed."""
        if not self.fast:
            return integrate_flow(y, self.rates_fn(w, v, omega), self.guards, t_span, tol, h0=h0)
        c, r, W = self._linear_terms(w, v, omega)
        L = self.layout
        t0, t1 = float(t_span[0]), float(t_span[1])
        h = h0 if h0 else 1e-3 * max(t1 - t0, 0.0) + 1e-12
        ts_all, ys_all = [], []
        y = np.ascontiguousarray(y, dtype=float)
        while True:
            status, cnt, h, fired = _kernels.segment(
                y, t0, t1, h, self._M, c, self._R, r, W, self._S,
                L.tau.start, L.eta.start, self.thresholds, self.etm, self.eta_threshold,
                tol.atol, tol.rtol, tol.max_step, tol.event_time, tol.guard_value,
                self._ts_buf, self._ys_buf,
            )
            first = 0 if not ts_all else 1
            ts_all.append(self._ts_buf[first:cnt].copy())
            ys_all.append(self._ys_buf[first:cnt].copy())
            if status == _kernels.FULL:
                t0, y = float(self._ts_buf[cnt - 1]), self._ys_buf[cnt - 1].copy()
                continue
            break
        t = np.concatenate(ts_all)
        Y = np.concatenate(ys_all)
        if status == _kernels.NONFINITE:
            raise ModelFault(f"non-finite state or rates near t={t[-1]}")
        if status == _kernels.UNDERFLOW:
            raise StepSizeUnderflow(f"step size {h:g} collapsed at t={t[-1]}")
        hit = None
        if status == _kernels.HIT:
            hit = GuardHit(float(t[-1]), tuple(int(i) for i in np.flatnonzero(fired)))
        return FlowSegment(t, Y, hit, h)

    def flow_batch(self, y, k0, v, omega, t0, t_lim, tol: IntegratorTolerances, h0=None, batch: int = 256) -> FlowSegment:
        """Fast-path flow across consecutive noise intervals starting with interval ``k0``.

        Equivalent to calling :meth:`flow` once per interval; stops at
        ``t_lim``, at a guard crossing or after ``batch`` intervals.
        """
        dwell = self.noise.dwell
        W_noise = self.noise_values(k0, batch)
        c, r, W = self._linear_terms(W_noise[0], v, omega)
        L = self.layout
        t0 = float(t0)
        if not h0:
            h0 = 1e-3 * max(min((k0 + 1) * dwell, t_lim) - t0, 0.0) + 1e-12
        status, cnt, h, fired = _kernels.segment_batch(
            np.ascontiguousarray(y, dtype=float), t0, float(t_lim), h0, int(k0), dwell, W_noise,
            self._M, c, self._R, W, self._S,
            L.tau.start, L.eta.start, self.thresholds, self.etm, self.eta_threshold,
            tol.atol, tol.rtol, tol.max_step, tol.event_time, tol.guard_value,
            self._tsb_buf, self._ysb_buf,
        )
        t = self._tsb_buf[:cnt].copy()
        Y = self._ysb_buf[:cnt].copy()
        if status == _kernels.NONFINITE:
            raise ModelFault(f"non-finite state or rates near t={t[-1]}")
        if status == _kernels.UNDERFLOW:
            raise StepSizeUnderflow(f"step size {h:g} collapsed at t={t[-1]}")
        hit = None
        if status == _kernels.HIT:
            hit = GuardHit(float(t[-1]), tuple(int(i) for i in np.flatnonzero(fired)))
        return FlowSegment(t, Y, hit, h)

    def noise_values(self, k0: int, count: int) -> np.ndarray:
        """Noise samples of intervals ``k0 .. k0+count-1`` as rows."""
        if hasattr(self.noise, "interval_values"):
            return np.ascontiguousarray(self.noise.interval_values(k0, count), dtype=float)
        return np.array([self.noise_value(k) for k in range(k0, k0 + count)], dtype=float).reshape(count, self.plant.m)

    def _generic_rates(self, w, v, omega):
        L = self.layout
        plant, obs = self.plant, self.observer
        K, q, m = L.copies, L.q, L.m
        nodes = self.nodes
        slices = [plant.node_slice(i) for i in range(plant.N)]

        def rates(t, y):
            x = y[L.x]
            Z = y[L.z].reshape(K, q)
            Yh = y[L.yhat].reshape(K, m)
            out = np.zeros_like(y)
            out[L.x] = plant.f_p(x, v)
            dZ = np.empty((K, q))
            dY = np.empty((K, m))
            for c in range(K):
                dZ[c] = obs.f_o(Z[c], Yh[c])
                dY[c] = holding_rate(obs, plant, Z[c])
            out[L.z] = dZ.ravel()
            out[L.yhat] = dY.ravel()
            out[L.tau] = 1.0
            ytil = plant.output(x) + w
            tau, eta = y[L.tau], y[L.eta]
            deta = np.zeros(plant.N)
            for i, p in enumerate(nodes):
                if p.mode != "event_triggered":
                    continue
                c = self.copy_of_node[i]
                sl = slices[i]
                chi = obs.h_o(Z[c])
                q_i = np.atleast_1d(plant.h_p[i](chi)) - ytil[sl]
                e_i = Yh[c][sl] - ytil[sl]
                deta[i] = psi_rate(p, q_i, e_i, tau[i], eta[i], omega_value=omega[i])
            out[L.eta] = deta
            return out

        return rates

    def omega(self, y) -> np.ndarray:
        return (y[self.layout.tau] >= self.tau_miet).astype(float)

    def guards(self, t, y) -> np.ndarray:
        tau = y[self.layout.tau]
        g = tau - self.thresholds
        eta_g = self.eta_threshold - y[self.layout.eta]
        return np.where(self.etm, np.minimum(g, eta_g), g)

    def snap_timers(self, y):
        """Round timers that sit within float noise below their threshold up to it."""
        tau = y[self.layout.tau]
        close = (tau < self.thresholds) & (self.thresholds - tau <= 1e-12 * np.maximum(1.0, self.thresholds))
        if close.any():
            y = y.copy()
            y[self.layout.tau] = np.where(close, self.thresholds, tau)
        return y

    def next_switch_time(self, t, y) -> float:
        """Earliest instant a timer reaches its MIET or time-trigger threshold."""
        tau = y[self.layout.tau]
        due = self.thresholds - tau
        due = due[due > 0]
        return t + float(due.min()) if due.size else math.inf

    # -- jumps -------------------------------------------------------------
    def jump(self, y, node: int, w) -> Tuple[np.ndarray, float, float, float]:
        """Transmission of ``node``; returns the new state, timer and eta before/after."""
        L = self.layout
        sl = self.plant.node_slice(node)
        y = y.copy()
        x = y[L.x]
        ytil_i = np.atleast_1d(self.plant.h_p[node](x)) + w[sl]
        Yh = y[L.yhat].reshape(L.copies, L.m)
        eps_tilde = Yh[self.copy_of_node[node], sl] - ytil_i
        Yh[:, sl] = ytil_i
        y[L.yhat] = Yh.ravel()
        y[L.what][sl] = w[sl]
        tau_before = float(y[L.tau][node])
        eta_before = float(y[L.eta][node])
        p = self.nodes[node]
        eta_after = eta_reset(p, eps_tilde) if p.mode == "event_triggered" else 0.0
        y[L.tau][node] = 0.0
        y[L.eta][node] = eta_after
        return y, tau_before, eta_before, eta_after

    # -- diagnostics -------------------------------------------------------
    def errors(self, y, w=None, copy: int = 0) -> ErrorCoordinates:
        L = self.layout
        Z = y[L.z].reshape(L.copies, L.q)
        Yh = y[L.yhat].reshape(L.copies, L.m)
        w = np.zeros(L.m) if w is None else w
        return derived_errors(self.plant, self.observer, y[L.x], Z[copy], Yh[copy], y[L.what], w)

    def error_norm(self, y) -> float:
        L = self.layout
        chi = np.asarray(self.observer.h_o(y[L.z][: L.q]), dtype=float)
        return float(np.linalg.norm(chi - y[L.x]))


@dataclass
class HybridArc:
    """Recorded solution on a hybrid time domain.

    ``t``, ``j`` and ``y`` are aligned; each jump contributes its pre- and
    post-jump states at the same ``t`` with consecutive ``j``.
    """

    t: np.ndarray
    j: np.ndarray
    y: np.ndarray
    layout: StateLayout
    events: List[EventRecord] = field(default_factory=list)
    horizon: float = 0.0

    def __len__(self):
        return len(self.t)

    def state(self, k: int) -> HybridState:
        return self.layout.unpack(self.y[k])

    @property
    def samples(self) -> List[Tuple[HybridTimePoint, HybridState]]:
        return [(HybridTimePoint(float(t), int(j)), self.state(k)) for k, (t, j) in enumerate(zip(self.t, self.j))]

    @property
    def final_j(self) -> int:
        return int(self.j[-1])

    def node_events(self, node: int) -> List[EventRecord]:
        return [ev for ev in self.events if ev.node == node]


def apply_jump(loop: ClosedLoop, state: HybridState, node: int, current_noise) -> HybridState:
    """Transmission of ``node`` from ``state`` with the node's present noise sample.

    ``current_noise`` is the node's own noise vector (length ``m_node``).
    """
    w = np.zeros(loop.plant.m)
    w[loop.plant.node_slice(node)] = current_noise
    y, *_ = loop.jump(loop.layout.pack(state), node, w)
    return loop.layout.unpack(y)


def simulate(
    loop: ClosedLoop,
    initial: HybridState,
    horizon: float,
    tol: IntegratorTolerances = IntegratorTolerances(),
    t0: float = 0.0,
) -> HybridArc:
    """Run the closed loop from ``initial`` until ``t = horizon``.

    Raises
    ------
    ZenoError
        If more than ``N`` jumps land in a window shorter than the smallest
        dwell constant (unreachable for a correct trigger design).
    """
    L = loop.layout
    loop.eta_threshold = tol.eta_threshold
    y = L.pack(initial)
    if np.any(y[L.tau] < 0) or np.any(y[L.eta] < 0):
        raise ValueError("initial timers and trigger variables must be nonnegative")
    t, j = float(t0), 0
    dwell = loop.dwell
    k = int(math.floor(t / dwell)) if dwell else 0
    next_noise = (k + 1) * dwell if dwell else math.inf

    rec_t, rec_j, rec_y = [t], [0], [y.copy()]
    last_rec = t
    events: List[EventRecord] = []
    recent = deque()
    h = None
    N = loop.plant.N

    while True:
        while t >= next_noise:
            k += 1
            next_noise = (k + 1) * dwell
        y = loop.snap_timers(y)
        w = loop.noise_value(k)
        if t < horizon:
            due = np.flatnonzero(loop.guards(t, y) >= 0)
            for i in due:
                if rec_t[-1] != t or rec_j[-1] != j:
                    rec_t.append(t)
                    rec_j.append(j)
                    rec_y.append(y.copy())
                y, tau_b, eta_b, eta_a = loop.jump(y, int(i), w)
                events.append(EventRecord(int(i), t, j, tau_b, eta_b, eta_a))
                j += 1
                rec_t.append(t)
                rec_j.append(j)
                rec_y.append(y.copy())
                last_rec = t
                recent.append(t)
                while recent and recent[0] <= t - loop.tau_dwell_min + tol.event_time:
                    recent.popleft()
                if len(recent) > N:
                    raise ZenoError(
                        f"{len(recent)} jumps within {loop.tau_dwell_min:g} s ending at t={t:.9g}"
                    )
        if t >= horizon:
            break

        t_lim = min(horizon, loop.next_disturbance_change(t), loop.next_switch_time(t, y))
        v = loop.disturbance_value(t)
        if loop.fast and dwell and loop.batch_intervals > 0:
            seg = loop.flow_batch(y, k, v, loop.omega(y), t, t_lim, tol, h0=h, batch=loop.batch_intervals)
        else:
            seg = loop.flow(y, w, v, loop.omega(y), (t, min(t_lim, next_noise)), tol, h0=h)
        h = seg.next_step
        n_pts = len(seg.t)
        for idx in range(1, n_pts):
            ts = seg.t[idx]
            if ts - last_rec >= tol.record_dt or ts >= horizon:
                rec_t.append(ts)
                rec_j.append(j)
                rec_y.append(seg.y[idx])
                last_rec = ts
        t, y = float(seg.t[-1]), seg.y[-1].copy()

    return HybridArc(np.array(rec_t), np.array(rec_j), np.array(rec_y), L, events, horizon)
