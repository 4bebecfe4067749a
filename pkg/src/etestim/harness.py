"""Scenario configuration, seeded noise, end-to-end runs and run metrics.

A scenario is a JSON document (schema in ``scenario.schema.json``) describing
the model, the trigger constants, the initial state, the noise and
disturbance signals and the integrator settings.  :func:`run_scenario`
simulates it and returns a :class:`SimulationReport`; when an output
directory is given it also writes ``events.csv``, ``trace.csv`` and
``summary.json``.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import importlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np
import scipy.linalg as sla

from .estimation import ObserverModel, PlantModel, lti_plant, luenberger_observer
from .hybrid import ClosedLoop, EventRecord, HybridArc, HybridState, IntegratorTolerances, simulate
from .lti_design import LmiProblem, case_study_lmi, case_study_model, solve_P
from .triggering import NodeTriggerParams

NOISE_BLOCK = 1024


class ConfigError(ValueError):
    """Invalid scenario; the message names the offending field."""


# -- signals -----------------------------------------------------------------
class NoiseSignal:
    """Piecewise-constant uniform noise, one value per node per dwell interval.

    Values on ``[k dwell, (k+1) dwell)`` are drawn from ``U[-a_i, a_i]``
    componentwise.  The generator is keyed by ``(seed, node, block)`` with
    blocks of 1024 intervals, so any interval can be evaluated in any order
    and always yields the same value.

    Parameters
    ----------
    amplitude : float or sequence of float
        Bound ``a_i`` per node (a scalar applies to every node).
    dwell : float
        Hold time of each sample in seconds.
    seed : int
        64-bit seed.
    dims : sequence of int
        Output dimension of each node.
    """

    def __init__(self, amplitude, dwell: float, seed: int, dims: Sequence[int]):
        dims = [int(d) for d in dims]
        amp = np.broadcast_to(np.asarray(amplitude, dtype=float), (len(dims),)).copy()
        if np.any(amp < 0) or not np.all(np.isfinite(amp)):
            raise ValueError("noise amplitudes must be finite and nonnegative")
        if not dwell > 0:
            raise ValueError("noise dwell must be positive")
        self.amplitude = amp
        self.dwell = float(dwell)
        self.seed = int(seed)
        self.dims = dims
        self._cache: Dict[Tuple[int, int], np.ndarray] = {}

    @property
    def m(self) -> int:
        return sum(self.dims)

    def _block(self, node: int, b: int) -> np.ndarray:
        key = (node, b)
        blk = self._cache.get(key)
        if blk is None:
            if len(self._cache) > 64:
                self._cache.clear()
            ss = np.random.SeedSequence(self.seed, spawn_key=(node, b))
            rng = np.random.Generator(np.random.Philox(ss))
            a = self.amplitude[node]
            blk = rng.uniform(-a, a, size=(NOISE_BLOCK, self.dims[node])) if a > 0 else np.zeros((NOISE_BLOCK, self.dims[node]))
            self._cache[key] = blk
        return blk

    def node_value(self, node: int, k: int) -> np.ndarray:
        b, r = divmod(int(k), NOISE_BLOCK)
        return self._block(node, b)[r]

    def interval_value(self, k: int) -> np.ndarray:
        return np.concatenate([self.node_value(i, k) for i in range(len(self.dims))])

    def interval_values(self, k0: int, count: int) -> np.ndarray:
        """Rows ``interval_value(k)`` for ``k = k0 .. k0+count-1``."""
        cols = []
        for i in range(len(self.dims)):
            parts, k, left = [], int(k0), int(count)
            while left > 0:
                b, r = divmod(k, NOISE_BLOCK)
                take = min(left, NOISE_BLOCK - r)
                parts.append(self._block(i, b)[r : r + take])
                k += take
                left -= take
            cols.append(np.concatenate(parts))
        return np.hstack(cols)


def noise_sample(gen: NoiseSignal, t: float) -> np.ndarray:
    """Stacked noise vector at time ``t``."""
    if t < 0:
        raise ValueError("noise is defined for t >= 0")
    return gen.interval_value(int(math.floor(t / gen.dwell)))


class PiecewiseConstantDisturbance:
    """``v(t) = values[k]`` for ``times[k] <= t < times[k+1]``."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.times.ndim != 1 or len(self.times) == 0 or self.times[0] != 0:
            raise ValueError("disturbance times must start at 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("disturbance times must be strictly increasing")
        if len(self.values) != len(self.times):
            raise ValueError("one disturbance value per switching time is required")

    def value(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[max(k, 0)]

    def next_change(self, t: float) -> float:
        k = int(np.searchsorted(self.times, t, side="right"))
        return float(self.times[k]) if k < len(self.times) else math.inf


# -- configuration -----------------------------------------------------------
@lru_cache(maxsize=1)
def scenario_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("scenario.schema.json").read_text())


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def _describe(err) -> str:
    # for oneOf failures report the branch whose discriminator matched
    while err.context:
        branches: Dict[Any, list] = {}
        for e in err.context:
            branches.setdefault(e.relative_schema_path[0], []).append(e)

        def score(errs):
            mismatch = any(e.validator in ("const", "type") for e in errs)
            return (mismatch, -max(len(e.absolute_path) for e in errs), len(errs))

        errs = min(branches.values(), key=score)
        err = max(errs, key=lambda e: len(e.absolute_path))
    return f"{_path(err)}: {err.message}"


@dataclass
class ScenarioConfig:
    """Validated scenario; ``raw`` keeps the document as given."""

    raw: Dict[str, Any]

    def __post_init__(self):
        if not isinstance(self.raw, dict):
            raise ConfigError("<root>: scenario must be a JSON object")
        errors = sorted(jsonschema.Draft202012Validator(scenario_schema()).iter_errors(self.raw), key=_path)
        if errors:
            raise ConfigError("; ".join(_describe(e) for e in errors[:5]))
        self.raw = copy.deepcopy(self.raw)
        # builds once to surface dimension and parameter errors early
        self.build()

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"<root>: not valid JSON ({exc})") from None
        except OSError as exc:
            raise ConfigError(f"<root>: cannot read {path} ({exc.strerror})") from None
        return cls(raw)

    def replace(self, **changes) -> "ScenarioConfig":
        raw = copy.deepcopy(self.raw)
        raw.update(changes)
        return ScenarioConfig(raw)

    # convenience accessors
    @property
    def model_kind(self) -> str:
        m = self.raw.get("model", "case_study")
        return m if isinstance(m, str) else m["kind"]

    @property
    def horizon(self) -> float:
        return float(self.raw.get("horizon", 20.0))

    @property
    def seed(self) -> Optional[int]:
        noise = self.raw.get("noise")
        return None if noise is None else int(noise.get("seed", 0))

    @property
    def output_dir(self) -> Optional[str]:
        return self.raw.get("output_dir")

    @property
    def tolerances(self) -> IntegratorTolerances:
        kw = dict(self.raw.get("tolerances", {}))
        kw["record_dt"] = float(self.raw.get("record_dt", 1e-3))
        return IntegratorTolerances(**kw)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring ``output_dir``."""
        doc = {k: v for k, v in self.raw.items() if k != "output_dir"}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def build(self) -> "Scenario":
        return _build(self)


@dataclass
class Scenario:
    plant: PlantModel
    observer: ObserverModel
    nodes: List[NodeTriggerParams]
    loop: ClosedLoop
    initial: HybridState
    lmi: Optional[LmiProblem]
    P: Optional[np.ndarray] = None


def _noise_amplitudes(raw, N) -> np.ndarray:
    noise = raw.get("noise")
    if noise is None:
        return np.zeros(N)
    amp = noise["amplitude"]
    if isinstance(amp, list):
        if len(amp) != N:
            raise ConfigError(f"noise.amplitude: expected {N} entries (one per node), got {len(amp)}")
        return np.asarray(amp, dtype=float)
    return np.full(N, float(amp))


def _node_overrides(raw, N) -> List[dict]:
    spec = raw.get("nodes", {})
    if isinstance(spec, dict):
        return [dict(spec) for _ in range(N)]
    if len(spec) != N:
        raise ConfigError(f"nodes: expected {N} entries (one per node), got {len(spec)}")
    return [dict(s) for s in spec]


def _make_node(fields: dict, where: str) -> NodeTriggerParams:
    if np.isscalar(fields.get("Q")):
        fields["Q"] = [[fields["Q"]]]
    try:
        return NodeTriggerParams(**fields)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _vec(raw, key, size, default, where):
    val = raw.get(key)
    if val is None:
        return np.array(default, dtype=float)
    arr = np.asarray(val, dtype=float)
    if arr.shape != (size,):
        raise ConfigError(f"{where}.{key}: expected {size} entries, got {arr.size}")
    return arr


def _mat(val, where, shape=None):
    try:
        arr = np.asarray(val, dtype=float)
    except ValueError:
        raise ConfigError(f"{where}: rows of unequal length") from None
    if arr.ndim != 2 or (shape is not None and arr.shape != shape):
        want = f" {shape}" if shape else ""
        raise ConfigError(f"{where}: expected a matrix{want}, got shape {arr.shape}")
    return arr


def _build(cfg: ScenarioConfig) -> Scenario:
    raw = cfg.raw
    kind = cfg.model_kind
    model = raw.get("model", "case_study")
    lmi = None
    P = None

    if kind == "case_study":
        design = case_study_model()
        plant, observer = design.plant, design.observer
        N = plant.N
        amps = _noise_amplitudes(raw, N)
        nodes = []
        for i, (base, over) in enumerate(zip(design.nodes, _node_overrides(raw, N))):
            fields = {k: getattr(base, k) for k in ("gamma", "lam", "L", "sigma", "s", "beta_lo", "beta_hi", "Q", "mu", "mode", "period", "reset")}
            fields["w_bar"] = amps[i]
            fields.update(over)
            nodes.append(_make_node(fields, f"nodes[{i}]"))
        lmi = _case_study_lmi_for(nodes)
        x0_default = np.eye(plant.n)[0]
    elif kind == "lti":
        A = _mat(model["A"], "model.A")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigError(f"model.A: must be square, got shape {A.shape}")
        Cs = [_mat(C, f"model.C[{i}]") for i, C in enumerate(model["C"])]
        for i, C in enumerate(Cs):
            if C.shape[1] != n:
                raise ConfigError(f"model.C[{i}]: expected {n} columns, got {C.shape[1]}")
        m = sum(C.shape[0] for C in Cs)
        Lg = _mat(model["L"], "model.L", (n, m))
        B = _mat(model["B"], "model.B") if "B" in model else None
        if B is not None and B.shape[0] != n:
            raise ConfigError(f"model.B: expected {n} rows, got {B.shape[0]}")
        plant = lti_plant(A, Cs, B)
        observer = luenberger_observer(A, Lg, np.vstack(Cs))
        N = plant.N
        nodes = _generic_nodes(raw, plant)
        lmi_spec = raw.get("lmi")
        if lmi_spec is not None:
            if "P" in lmi_spec:
                P = _mat(lmi_spec["P"], "lmi.P", (n, n))
            lmi = LmiProblem(
                A=A,
                C=np.vstack(Cs),
                Lgain=Lg,
                Q=sla.block_diag(*[p.Q for p in nodes]),
                mu=[p.mu for p in nodes],
                gamma=[p.gamma for p in nodes],
                rho_V=float(lmi_spec.get("rho_V", 2.0)),
                theta=float(lmi_spec.get("theta", 1e4)),
                output_dims=plant.output_dims,
            )
        x0_default = None
    else:
        modname, func = model["factory"].split(":")
        try:
            factory = getattr(importlib.import_module(modname), func)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"model.factory: cannot load {model['factory']} ({exc})") from None
        built = factory(**model.get("options", {}))
        if isinstance(built, dict):
            plant, observer = built["plant"], built["observer"]
        else:
            plant, observer = built[:2]
        if not isinstance(plant, PlantModel) or not isinstance(observer, ObserverModel):
            raise ConfigError("model.factory: must return (PlantModel, ObserverModel)")
        N = plant.N
        nodes = _generic_nodes(raw, plant)
        x0_default = None

    if raw.get("lmi") is not None and kind != "lti":
        raise ConfigError("lmi: only supported for inline LTI models")

    init = raw.get("initial", {})
    n, q, m = plant.n, observer.q, plant.m
    if x0_default is None and "x0" not in init:
        raise ConfigError("initial.x0: required for this model")
    state = HybridState(
        x=_vec(init, "x0", n, x0_default, "initial"),
        z=_vec(init, "z0", q, np.zeros(q), "initial"),
        yhat=_vec(init, "yhat0", m, np.zeros(m), "initial"),
        what=_vec(init, "what0", m, np.zeros(m), "initial"),
        tau=_vec(init, "tau0", N, np.zeros(N), "initial"),
        eta=_vec(init, "eta0", N, np.zeros(N), "initial"),
    )
    if np.any(state.tau < 0) or np.any(state.eta < 0):
        raise ConfigError("initial: tau0 and eta0 must be nonnegative")

    noise = None
    nspec = raw.get("noise")
    # an identically zero signal needs no segment breaks
    if nspec is not None and np.any(_noise_amplitudes(raw, N) > 0):
        noise = NoiseSignal(
            _noise_amplitudes(raw, N), float(nspec.get("dwell", 1e-4)), int(nspec.get("seed", 0)), plant.output_dims
        )
    dist = None
    dspec = raw.get("disturbance")
    if dspec is not None:
        if plant.p == 0:
            raise ConfigError("disturbance: the model has no disturbance input")
        try:
            dist = PiecewiseConstantDisturbance(dspec["times"], dspec["values"])
        except ValueError as exc:
            raise ConfigError(f"disturbance: {exc}") from None
        if dist.values.shape[1] != plant.p:
            raise ConfigError(f"disturbance.values: expected rows of length {plant.p}")
    try:
        loop = ClosedLoop(
            plant, observer, nodes, noise=noise, disturbance=dist,
            redundant_observers=bool(raw.get("redundant_observers", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"nodes: {exc}") from None
    return Scenario(plant, observer, nodes, loop, state, lmi, P)


def _generic_nodes(raw, plant) -> List[NodeTriggerParams]:
    if "nodes" not in raw:
        raise ConfigError("nodes: trigger constants are required for this model")
    amps = _noise_amplitudes(raw, plant.N)
    nodes = []
    for i, over in enumerate(_node_overrides(raw, plant.N)):
        fields = {"w_bar": amps[i], "Q": np.eye(plant.output_dims[i])}
        fields.update(over)
        for key in ("gamma", "lam"):
            if key not in fields:
                raise ConfigError(f"nodes[{i}].{key}: required")
        nodes.append(_make_node(fields, f"nodes[{i}]"))
    return nodes


def _case_study_lmi_for(nodes) -> LmiProblem:
    base = case_study_lmi()
    return LmiProblem(
        A=base.A,
        C=base.C,
        Lgain=base.Lgain,
        Q=sla.block_diag(*[p.Q for p in nodes]),
        mu=[p.mu for p in nodes],
        gamma=[p.gamma for p in nodes],
        rho_V=base.rho_V,
        theta=base.theta,
        output_dims=base.output_dims,
    )


_P_CACHE: Dict[bytes, np.ndarray] = {}


def lmi_certificate(problem: LmiProblem) -> np.ndarray:
    """Solve for ``P``, memoized on the problem data."""
    key = hashlib.sha256(
        b"".join(np.ascontiguousarray(a, dtype=float).tobytes() for a in (problem.A, problem.C, problem.Lgain, problem.Q, problem.mu, problem.gamma))
        + np.array([problem.rho_V, problem.theta]).tobytes()
    ).digest()
    if key not in _P_CACHE:
        _P_CACHE[key] = solve_P(problem).P
    return _P_CACHE[key]


# -- metrics -----------------------------------------------------------------
@dataclass(frozen=True)
class IetStats:
    node: int
    count: int
    min: Optional[float]
    mean: Optional[float]
    max: Optional[float]

    def as_dict(self) -> dict:
        return {"node": self.node + 1, "count": self.count, "min": self.min, "mean": self.mean, "max": self.max}


def inter_event_times(events: Sequence[EventRecord], node: int, since: float = 0.0) -> np.ndarray:
    """Gaps between consecutive transmissions of ``node`` ending at or after ``since``."""
    t = np.array([ev.time for ev in events if ev.node == node])
    gaps = np.diff(t)
    return gaps[t[1:] >= since] if t.size > 1 else gaps


def iet_stats(events: Sequence[EventRecord], N: Optional[int] = None, since: float = 0.0) -> List[IetStats]:
    """Per-node inter-event statistics.

    ``count`` is the number of transmissions (ending at or after ``since``);
    min/mean/max are taken over the gaps between consecutive transmissions
    and are ``None`` when there are fewer than two.
    """
    if N is None:
        N = 1 + max((ev.node for ev in events), default=-1)
    out = []
    for i in range(N):
        gaps = inter_event_times(events, i, since)
        count = sum(1 for ev in events if ev.node == i and ev.time >= since)
        if gaps.size:
            out.append(IetStats(i, count, float(gaps.min()), float(gaps.mean()), float(gaps.max())))
        else:
            out.append(IetStats(i, count, None, None, None))
    return out


def window_mean_iet(events: Sequence[EventRecord], node: int, t0: float, t1: float) -> float:
    """Average inter-event time of ``node`` over ``[t0, t1]``: window length per transmission.

    Unlike the mean of completed gaps this stays defined when the node
    transmits once or never in the window (``inf`` for no transmission).
    """
    count = sum(1 for ev in events if ev.node == node and t0 <= ev.time <= t1)
    return (t1 - t0) / count if count else math.inf


def error_norms(arc: HybridArc, loop: ClosedLoop) -> np.ndarray:
    L = arc.layout
    chi = np.array([loop.observer.h_o(z) for z in arc.y[:, L.z][:, : L.q]])
    return np.linalg.norm(chi - arc.y[:, L.x], axis=1)


def ultimate_bound(t, e_norm, horizon: float, fraction: float = 0.25) -> float:
    """``sup |e|`` over the final ``fraction`` of the horizon."""
    t = np.asarray(t)
    mask = t >= (1.0 - fraction) * horizon
    return float(np.max(np.asarray(e_norm)[mask]))


@dataclass
class MonitorLog:
    """Values of ``U`` along an arc and the checks made on them."""

    t: np.ndarray
    j: np.ndarray
    U: np.ndarray
    jump_decrements: np.ndarray
    jump_violations: int
    flow_increases: int
    tol: float

    @property
    def violations(self) -> int:
        return self.jump_violations


def lyapunov_value(loop: ClosedLoop, P, y) -> float:
    """``e'Pe + sum_i gamma_i phi_i(tau_i) W_i(eps_i)**2 + eta_i`` for one flat state."""
    L = loop.layout
    err = loop.errors(y)
    U = float(err.e @ P @ err.e)
    tau, eta = y[L.tau], y[L.eta]
    for i, p in enumerate(loop.nodes):
        eps_i = err.eps[loop.plant.node_slice(i)]
        U += p.gamma * float(p.phi(tau[i])) * p.W_value(eps_i) ** 2 + eta[i]
    return U


def lyapunov_monitor(arc: HybridArc, loop: ClosedLoop, P, tol: float = 1e-10, flow_rtol: float = 1e-8, flow_after: float = 0.0) -> MonitorLog:
    """Evaluate ``U`` along ``arc`` and check it at every jump and along flow.

    At the jump of node ``i`` the change of ``U`` is
    ``eta0_i - eta_i - gamma_i phi_i(tau_i) W_i(eps_i)**2``; values above
    ``tol`` count as violations.  Along flow, increases of ``U`` between
    consecutive samples with ``t >= flow_after`` beyond
    ``flow_rtol * (1 + |U|)`` are counted (meaningful for runs without noise,
    disturbance or space regularization).
    """
    if P is None:
        raise ValueError("the Lyapunov monitor needs a feasible P")
    P = np.asarray(P, dtype=float)
    U = np.array([lyapunov_value(loop, P, y) for y in arc.y])
    decs = []
    # the pre-jump sample of jump j is the last sample with counter j
    last_with_j = {}
    for k, jj in enumerate(arc.j):
        last_with_j[int(jj)] = k
    for ev in arc.events:
        y = arc.y[last_with_j[ev.jump_index]]
        err = loop.errors(y)
        p = loop.nodes[ev.node]
        eps_i = err.eps[loop.plant.node_slice(ev.node)]
        decs.append(ev.eta_after - ev.eta_before - p.gamma * float(p.phi(ev.inter_event_time)) * p.W_value(eps_i) ** 2)
    decs = np.array(decs)
    same = (np.diff(arc.j) == 0) & (arc.t[1:] >= flow_after)
    rise = np.diff(U) > flow_rtol * (1.0 + np.abs(U[:-1]))
    return MonitorLog(arc.t, arc.j, U, decs, int(np.sum(decs > tol)), int(np.sum(same & rise)), tol)


# -- runs --------------------------------------------------------------------
@dataclass
class SimulationReport:
    config: ScenarioConfig
    arc: HybridArc
    loop: ClosedLoop
    events: List[EventRecord]
    stats: List[IetStats]
    e_norm: np.ndarray
    ultimate_bound: float
    final_error: float
    tau_miet: List[float]
    monitor: Optional[MonitorLog]
    noise_bound_ok: bool
    wall_time: float
    P: Optional[np.ndarray] = None
    files: Dict[str, str] = field(default_factory=dict)

    @property
    def seed(self) -> Optional[int]:
        return self.config.seed

    def node_events(self, node: int) -> List[EventRecord]:
        return [ev for ev in self.events if ev.node == node]

    def summary(self) -> dict:
        return {
            "horizon": self.arc.horizon,
            "seed": self.seed,
            "config_hash": self.config.config_hash(),
            "tau_miet": self.tau_miet,
            "events": len(self.events),
            "iet": [s.as_dict() for s in self.stats],
            "ultimate_bound": self.ultimate_bound,
            "final_error_norm": self.final_error,
            "lyapunov_violations": None if self.monitor is None else self.monitor.jump_violations,
            "lyapunov_max_jump_change": None
            if self.monitor is None or not self.monitor.jump_decrements.size
            else float(self.monitor.jump_decrements.max()),
            "noise_bound_ok": self.noise_bound_ok,
            "config": self.config.raw,
        }


def _noise_bound_ok(arc: HybridArc, loop: ClosedLoop) -> bool:
    what = arc.y[:, arc.layout.what]
    for i, p in enumerate(loop.nodes):
        w = what[:, loop.plant.node_slice(i)]
        if np.any(np.linalg.norm(w, axis=1) > p.w_bar * (1 + 1e-12)):
            return False
    return True


def run_scenario(config, out_dir: Optional[str] = None, monitor: bool = True) -> SimulationReport:
    """Simulate ``config`` and collect metrics.

    ``out_dir`` (or the config's ``output_dir``) receives ``events.csv``,
    ``trace.csv`` and ``summary.json``; with neither nothing is written.
    """
    if not isinstance(config, ScenarioConfig):
        config = ScenarioConfig(config)
    sc = config.build()
    start = time.perf_counter()
    arc = simulate(sc.loop, sc.initial, config.horizon, config.tolerances)
    wall = time.perf_counter() - start
    e = error_norms(arc, sc.loop)
    P = sc.P
    if P is None and sc.lmi is not None and monitor:
        P = lmi_certificate(sc.lmi)
    mon = lyapunov_monitor(arc, sc.loop, P) if (monitor and P is not None) else None
    report = SimulationReport(
        config=config,
        arc=arc,
        loop=sc.loop,
        events=arc.events,
        stats=iet_stats(arc.events, sc.plant.N),
        e_norm=e,
        ultimate_bound=ultimate_bound(arc.t, e, config.horizon),
        final_error=float(e[-1]),
        tau_miet=[float(p.tau_miet) for p in sc.nodes],
        monitor=mon,
        noise_bound_ok=_noise_bound_ok(arc, sc.loop),
        wall_time=wall,
        P=P,
    )
    out_dir = out_dir or config.output_dir
    if out_dir:
        write_outputs(report, out_dir)
    return report


def write_outputs(report: SimulationReport, out_dir: str) -> Dict[str, str]:
    """Write ``events.csv``, ``trace.csv`` and ``summary.json``; node numbers are 1-based."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in ("events.csv", "trace.csv", "summary.json")}
    with open(paths["events.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "time", "jump_index", "inter_event_time"])
        for ev in report.events:
            w.writerow([ev.node + 1, repr(ev.time), ev.jump_index, repr(ev.inter_event_time)])
    arc = report.arc
    with open(paths["trace.csv"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "j", "e_norm"] + arc.layout.column_names())
        for t, j, e, y in zip(arc.t, arc.j, report.e_norm, arc.y):
            w.writerow([repr(float(t)), int(j), repr(float(e))] + [repr(float(v)) for v in y])
    with open(paths["summary.json"], "w") as fh:
        json.dump(report.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    report.files = paths
    return paths


def _sweep_one(args):
    raw, amp = args
    rep = run_scenario(ScenarioConfig(raw), monitor=False)
    return amp, rep.ultimate_bound


def iss_sweep(base, amplitudes: Sequence[float], workers: int = 1) -> List[Tuple[float, float]]:
    """Ultimate bound of ``base`` for each noise amplitude (same seed throughout).

    ``w_bar`` follows the amplitude unless ``base`` fixes it.  Runs are
    independent and use a process pool when ``workers > 1``.
    """
    if not isinstance(base, ScenarioConfig):
        base = ScenarioConfig(base)
    amps = [float(a) for a in amplitudes]
    if not amps or amps[0] != 0 or any(b < a for a, b in zip(amps, amps[1:])):
        raise ValueError("amplitudes must be sorted ascending and start at 0")
    noise = dict(base.raw.get("noise") or {})
    jobs = []
    for a in amps:
        raw = copy.deepcopy(base.raw)
        raw.pop("output_dir", None)
        raw["noise"] = {**noise, "amplitude": a}
        jobs.append((raw, a))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]


def check_sweep(results: Sequence[Tuple[float, float]], slack: float = 0.10) -> bool:
    """Bounds nondecreasing in amplitude up to ``slack`` relative per step."""
    bounds = [b for _, b in results]
    return all(b1 >= b0 * (1.0 - slack) for b0, b1 in zip(bounds, bounds[1:]))


def case_study_config(**overrides) -> ScenarioConfig:
    """The case-study scenario with its standard noise model (``1e-3``, ``1e-4`` s)."""
    raw = {
        "model": "case_study",
        "horizon": 20.0,
        "noise": {"amplitude": 1e-3, "dwell": 1e-4, "seed": 2021},
        "record_dt": 1e-3,
    }
    raw.update(overrides)
    return ScenarioConfig(raw)
