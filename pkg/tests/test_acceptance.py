"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal summary.
"""
import time
import timeit

import numpy as np
import scipy.linalg as sla

from conftest import ACCEPTANCE, SWEEP_AMPLITUDES
from etestim.estimation import (
    CASE_STUDY_A,
    CASE_STUDY_C1,
    CASE_STUDY_C2,
    CASE_STUDY_L,
    derived_errors,
    error_flow_g,
    observability_rank,
)
from etestim.harness import check_sweep, inter_event_times, window_mean_iet
from etestim.lti_design import assemble_lmi, case_study_lmi, solve_P
from etestim.triggering import compute_miet, phi_ode_oracle

TAU_MIET_REF = 0.056691


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def all_iets(report, node):
    """Every inter-event time of ``node``, the first measured from t = 0."""
    return np.array([ev.inter_event_time for ev in report.node_events(node)])


def test_c01_miet_reproduction():
    val = compute_miet(0.0, 6.1623, 0.7)
    per_call = min(timeit.repeat(lambda: compute_miet(0.0, 6.1623, 0.7), number=200, repeat=5)) / 200
    ok = abs(val - 0.0566) <= 1e-3 and abs(val - TAU_MIET_REF) <= 5e-7 and per_call < 1e-3
    record(1, ok, f"tau_MIET={val:.9f} (expected 0.0566), {per_call * 1e6:.1f} us per call")


def test_c02_oracle_equivalence():
    rng = np.random.default_rng(2)
    L = rng.uniform(0, 5, 100)
    gamma = rng.uniform(0.1, 10, 100)
    lam = rng.uniform(0.05, 0.95, 100)
    # exact branch points gamma = L, and the L = 0 limit
    gamma[:10] = L[:10] = rng.uniform(0.1, 5, 10)
    L[10:15] = 0.0
    start = time.perf_counter()
    diffs = [abs(compute_miet(a, b, c) - phi_ode_oracle(a, b, c)) for a, b, c in zip(L, gamma, lam)]
    elapsed = time.perf_counter() - start
    worst = max(diffs)
    record(2, worst <= 1e-8 and elapsed < 5.0, f"max |closed form - oracle| = {worst:.2e} on 100 points, {elapsed:.2f} s")


def test_c03_lmi_feasibility():
    pb = case_study_lmi()
    start = time.perf_counter()
    sol = solve_P(pb)
    elapsed = time.perf_counter() - start
    M = assemble_lmi(pb, sol.P)
    lam_max = float(np.linalg.eigvalsh(M).max())
    p_min = float(np.linalg.eigvalsh(sol.P).min())
    tol = 1e-6 * (1 + np.linalg.norm(M, "fro"))
    ok = M.shape == (12, 12) and p_min > 1e-6 and lam_max <= tol and elapsed < 30.0
    record(3, ok, f"max eig M(P) = {lam_max:.3e} <= {tol:.3e}, min eig P = {p_min:.3e}, {elapsed:.2f} s")


def test_c04_zeno_freedom(noisy_run):
    rep = noisy_run.value
    floor = TAU_MIET_REF - 1e-6
    mins = [float(all_iets(rep, i).min()) for i in range(2)]
    gaps = [float(inter_event_times(rep.events, i).min()) for i in range(2)]
    ok = (
        min(mins + gaps) >= floor
        and rep.arc.t[-1] == 20.0
        and noisy_run.seconds < 60.0
        and all(len(rep.node_events(i)) <= 20.0 / rep.loop.nodes[i].tau_dwell for i in range(2))
    )
    record(
        4,
        ok,
        f"min IET node1 {mins[0]:.7f}, node2 {mins[1]:.7f} (floor {floor}); "
        f"{len(rep.events)} events; {noisy_run.seconds:.1f} s",
    )


def test_c05_zero_noise_convergence(quiet_run):
    rep = quiet_run.value
    e0 = rep.e_norm[0]
    ok = abs(e0 - 1.0) < 1e-12 and rep.final_error <= 1e-3 and quiet_run.seconds < 60.0
    record(5, ok, f"|e(0)| = {e0:.3f}, |e(20)| = {rep.final_error:.3e}, {quiet_run.seconds:.1f} s")


def test_c06_space_regularization_direction(noisy_run, noisy_run_regularized):
    base, reg = noisy_run.value, noisy_run_regularized.value
    assert base.seed == reg.seed
    m0 = [window_mean_iet(base.events, i, 10.0, 20.0) for i in range(2)]
    m1 = [window_mean_iet(reg.events, i, 10.0, 20.0) for i in range(2)]
    ok = all(b >= a for a, b in zip(m0, m1)) and any(b > a for a, b in zip(m0, m1))
    fmt = lambda v: "inf (no transmission)" if np.isinf(v) else f"{v:.4f}"
    record(
        6,
        ok,
        "mean IET over [10, 20] s, s=0: " + ", ".join(fmt(v) for v in m0) + "; s=2e-4: " + ", ".join(fmt(v) for v in m1),
    )


def test_c07_lyapunov_jump_monotonicity(noisy_run, quiet_run):
    decs = np.concatenate([r.value.monitor.jump_decrements for r in (noisy_run, quiet_run)])
    n_events = sum(len(r.value.events) for r in (noisy_run, quiet_run))
    violations = int(np.sum(decs > 1e-10))
    ok = decs.size == n_events and violations == 0
    record(7, ok, f"{decs.size} jumps, max U(g) - U(xi) = {decs.max():.3e}, violations {violations}")


def test_c08_iss_sweep(sweep):
    res = sweep.value
    bounds = [b for _, b in res]
    ok = [a for a, _ in res] == list(SWEEP_AMPLITUDES) and check_sweep(res, 0.10) and bounds[0] <= 1e-6
    record(8, ok, "ultimate bounds " + ", ".join(f"{a:g}: {b:.3e}" for a, b in res) + f"; {sweep.seconds:.1f} s")


def _flow_matrix(A, Lg, C):
    """Generator of (x, z, yhat) during flow: x' = Ax, z' = (A+LC)z - L yhat, yhat' = CA z."""
    n, m = A.shape[0], C.shape[0]
    F = np.zeros((2 * n + m, 2 * n + m))
    F[:n, :n] = A
    F[n : 2 * n, n : 2 * n] = A + Lg @ C
    F[n : 2 * n, 2 * n :] = -Lg
    F[2 * n :, n : 2 * n] = C @ A
    return F


def test_c09_coordinate_equivalence(noisy_run):
    rep = noisy_run.value
    arc, loop = rep.arc, rep.loop
    L = arc.layout
    n, m = L.n, L.m
    C = np.vstack([CASE_STUDY_C1, CASE_STUDY_C2])
    F = _flow_matrix(CASE_STUDY_A, CASE_STUDY_L, C)
    h = 1e-5
    stencil = {s: sla.expm(F * s * h) for s in (-2, -1, 1, 2)}

    def both(k):
        y = arc.y[k]
        s0 = np.concatenate([y[L.x], y[L.z], y[L.yhat]])
        what = y[L.what]
        eps = {}
        for s, Phi in stencil.items():
            sv = Phi @ s0
            eps[s] = derived_errors(loop.plant, loop.observer, sv[:n], sv[n : 2 * n], sv[2 * n :], what, np.zeros(m)).eps
        fd = (eps[-2] - 8 * eps[-1] + 8 * eps[1] - eps[2]) / (12 * h)
        err = loop.errors(y)
        return fd, error_flow_g(loop.plant, loop.observer, y[L.z], err.e, err.eps, what)

    # flow samples only: drop the pre/post-jump pairs
    flow = np.flatnonzero(np.diff(arc.j, prepend=arc.j[0]) == 0)
    flow = flow[(np.diff(arc.j, append=arc.j[-1])[flow] == 0)]
    pairs = {int(k): both(k) for k in flow[np.linspace(0, flow.size - 1, 1100).astype(int)]}
    # where the derivative vanishes (e.g. e = -e1 at t = 0, since C A e1 = 0)
    # the ratio is undefined; those points are held to an absolute bound
    degenerate = [k for k, (fd, g) in pairs.items() if np.linalg.norm(g) <= 1e-9]
    abs_worst = max((np.linalg.norm(pairs[k][0] - pairs[k][1]) for k in degenerate), default=0.0)
    regular = [k for k in pairs if k not in degenerate][:1000]
    worst = max(np.linalg.norm(fd - g) / np.linalg.norm(g) for fd, g in (pairs[k] for k in regular))
    ok = len(regular) == 1000 and worst <= 1e-6 and abs_worst <= 1e-9
    record(
        9,
        ok,
        f"max relative error {worst:.2e} over {len(regular)} flow samples; "
        f"{len(degenerate)} samples with zero derivative, max abs error {abs_worst:.1e}",
    )


def test_c10_model_regression():
    eig = np.linalg.eigvals(CASE_STUDY_A)
    re = float(np.abs(eig.real).max())
    rank_both = observability_rank(CASE_STUDY_A, np.vstack([CASE_STUDY_C1, CASE_STUDY_C2]))
    rank_1 = observability_rank(CASE_STUDY_A, CASE_STUDY_C1)
    rank_2 = observability_rank(CASE_STUDY_A, CASE_STUDY_C2)
    ok = re <= 1e-10 and rank_both == 6 and rank_1 < 6 and rank_2 < 6
    record(10, ok, f"max |Re eig A| = {re:.1e}, rank (C1;C2) = {rank_both}, rank C1 = {rank_1}, rank C2 = {rank_2}")
