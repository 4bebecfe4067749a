"""LMI-based certificate for the linear case study.

The Luenberger observer with gain ``L`` satisfies the dissipation inequality
needed by the trigger design if there is ``P > 0`` with ``M(P) <= 0`` where
``M`` is the 4x4 block matrix assembled by :func:`assemble_lmi`.  ``M`` is
affine in ``P``; :func:`solve_P` searches for ``P`` by descending the
(smoothed) largest eigenvalue of ``M(P)`` from a Lyapunov-equation warm start.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

from .estimation import LtiCaseStudy, ObserverModel, PlantModel, lti_plant, luenberger_observer
from .triggering import NodeTriggerParams

log = logging.getLogger(__name__)


class LmiSolveError(RuntimeError):
    """No feasible ``P`` found within the restart budget."""

    def __init__(self, message, best_max_eigenvalue, best_P):
        super().__init__(message)
        self.best_max_eigenvalue = best_max_eigenvalue
        self.best_P = best_P


@dataclass(frozen=True, eq=False)
class LmiProblem:
    A: np.ndarray
    C: np.ndarray
    Lgain: np.ndarray
    Q: np.ndarray
    mu: np.ndarray
    gamma: np.ndarray
    rho_V: float
    theta: float
    output_dims: Optional[Sequence[int]] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        Lg = np.atleast_2d(np.asarray(self.Lgain, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n, m = A.shape[0], C.shape[0]
        dims = list(self.output_dims) if self.output_dims is not None else [1] * m
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if A.shape != (n, n) or C.shape[1] != n or Lg.shape != (n, m) or Q.shape != (m, m):
            raise ValueError("inconsistent LMI dimensions")
        if sum(dims) != m or len(mu) != len(dims) or len(gamma) != len(dims):
            raise ValueError("mu and gamma need one entry per node")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be symmetric positive definite")
        if self.rho_V <= 0 or self.theta <= 0:
            raise ValueError("rho_V and theta must be positive")
        for name, val in (("A", A), ("C", C), ("Lgain", Lg), ("Q", Q), ("mu", mu), ("gamma", gamma)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "output_dims", dims)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def Gamma(self) -> np.ndarray:
        return np.diag(np.repeat(self.mu - self.gamma**2, self.output_dims))


@dataclass(frozen=True)
class LmiReport:
    max_eigenvalue: float
    P_min_eigenvalue: float
    feasible: bool
    residual_norm: float
    tolerance: float


class LmiSolution(NamedTuple):
    P: np.ndarray
    report: LmiReport
    restarts_used: int


def _check_symmetric(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"P must be square, got shape {P.shape}")
    if not np.allclose(P, P.T, rtol=1e-12, atol=1e-12 * (1 + np.abs(P).max())):
        raise ValueError("P must be symmetric")
    return 0.5 * (P + P.T)


def _assemble(pb: LmiProblem, P) -> np.ndarray:
    A, C, Lg, Q = pb.A, pb.C, pb.Lgain, pb.Q
    m = pb.m
    Acl = A + Lg @ C
    CA = C @ A
    Lam = Acl.T @ P + P @ Acl + pb.rho_V * P + CA.T @ CA + C.T @ Q @ C
    PL = P @ Lg
    Z = np.zeros((m, m))
    I = np.eye(m)
    M = np.block(
        [
            [Lam, -PL, -PL, -C.T @ Q],
            [-PL.T, pb.Gamma, Z, Z],
            [-PL.T, Z, -pb.theta * I, Z],
            [-Q @ C, Z, Z, Q - pb.theta * I],
        ]
    )
    return 0.5 * (M + M.T)


def assemble_lmi(problem: LmiProblem, P) -> np.ndarray:
    """Symmetric ``(n + 3m) x (n + 3m)`` matrix that must be negative semidefinite."""
    return _assemble(problem, _check_symmetric(P))


def default_tolerance(M) -> float:
    return 1e-6 * (1.0 + np.linalg.norm(M, "fro"))


def verify_lmi(problem: LmiProblem, P, tol: Optional[float] = None) -> LmiReport:
    P = _check_symmetric(P)
    M = _assemble(problem, P)
    if tol is None:
        tol = default_tolerance(M)
    try:
        eig_M = np.linalg.eigvalsh(M)
        eig_P = np.linalg.eigvalsh(P)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"symmetric eigensolver failed: {exc}") from exc
    lmax = float(eig_M[-1])
    pmin = float(eig_P[0])
    return LmiReport(
        max_eigenvalue=lmax,
        P_min_eigenvalue=pmin,
        feasible=bool(lmax <= tol and pmin > 0),
        residual_norm=float(np.linalg.norm(np.maximum(eig_M, 0.0))),
        tolerance=float(tol),
    )


def lyapunov_warm_start(problem: LmiProblem) -> np.ndarray:
    """Solve ``(A+LC)'P + P(A+LC) = -(rho_V P + A'C'CA + C'QC + I)``.

    Needs ``A + LC + rho_V/2 I`` Hurwitz; raises ``ValueError`` otherwise.
    """
    n = problem.n
    shifted = problem.A + problem.Lgain @ problem.C + 0.5 * problem.rho_V * np.eye(n)
    if np.linalg.eigvals(shifted).real.max() >= 0:
        raise ValueError("A + LC + rho_V/2 I is not Hurwitz; no Lyapunov warm start")
    CA = problem.C @ problem.A
    rhs = -(CA.T @ CA + problem.C.T @ problem.Q @ problem.C + np.eye(n))
    P = sla.solve_continuous_lyapunov(shifted.T, rhs)
    return 0.5 * (P + P.T)


def _project_psd(P, floor):
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    return (V * np.maximum(w, floor)) @ V.T


class _AffineLmi:
    """``M(P) = M0 + sum_k v_k M_k`` over the upper-triangular coordinates of ``P``."""

    def __init__(self, problem: LmiProblem):
        n = problem.n
        self.n = n
        self.iu = np.triu_indices(n)
        self.M0 = _assemble(problem, np.zeros((n, n)))
        basis = []
        for i, j in zip(*self.iu):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(_assemble(problem, E) - self.M0)
        self.Mk = np.array(basis)

    def to_vec(self, P):
        return P[self.iu].copy()

    def to_mat(self, v):
        P = np.zeros((self.n, self.n))
        P[self.iu] = v
        return P + np.triu(P, 1).T

    def matrix(self, v):
        return self.M0 + np.tensordot(v, self.Mk, axes=1)

    def smoothed(self, v, temperature):
        """Log-sum-exp of the eigenvalues of ``M`` and its gradient in ``v``."""
        w, V = np.linalg.eigh(self.matrix(v))
        z = np.exp((w - w[-1]) / temperature)
        s = z.sum()
        weights = z / s
        G = (V * weights) @ V.T
        grad = np.einsum("kij,ij->k", self.Mk, G)
        return w[-1] + temperature * np.log(s), grad

    def subgradient(self, v):
        w, V = np.linalg.eigh(self.matrix(v))
        u = V[:, -1]
        return w[-1], np.einsum("kij,i,j->k", self.Mk, u, u)


def solve_P(
    problem: LmiProblem,
    *,
    eps: float = 1e-6,
    restarts: int = 6,
    seed: int = 0,
    stages: Sequence[float] = (2e-4, 2e-5, 2e-6, 2e-7, 2e-8),
    maxiter: int = 2000,
    subgradient_steps: int = 200,
    target: float = 0.0,
) -> LmiSolution:
    """Search for ``P >= eps I`` with ``M(P) <= tol I``.

    Each attempt starts from the Lyapunov warm start (the first attempt) or a
    random symmetric perturbation of it, then minimizes a log-sum-exp
    smoothing of ``lambda_max(M(P))`` with temperatures ``stages`` scaled by
    ``1 + ||M||_F``, projecting onto ``P >= eps I`` after every stage, and
    finishes with projected subgradient steps on ``lambda_max`` itself.
    An attempt stops early once ``lambda_max <= target``; otherwise its best
    point is accepted if it meets the verifier's tolerance.

    Raises
    ------
    LmiSolveError
        If no attempt is feasible; carries the best largest eigenvalue found.
    """
    aff = _AffineLmi(problem)
    rng = np.random.default_rng(seed)
    try:
        P0 = lyapunov_warm_start(problem)
    except ValueError:
        log.info("no Lyapunov warm start, starting from identity")
        P0 = np.eye(problem.n)
    scale = 1.0 + np.linalg.norm(_assemble(problem, P0), "fro")
    best = (np.inf, None)

    for attempt in range(restarts):
        if attempt == 0:
            P = P0
        else:
            R = rng.standard_normal((problem.n, problem.n))
            P = P0 + 0.1 * attempt * np.linalg.norm(P0) * (R + R.T) / (2 * problem.n)
        v = aff.to_vec(_project_psd(P, eps))
        for T in stages:
            res = minimize(
                aff.smoothed,
                v,
                args=(T * scale,),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": maxiter},
            )
            v = aff.to_vec(_project_psd(aff.to_mat(res.x), eps))
            report = verify_lmi(problem, aff.to_mat(v))
            if report.max_eigenvalue < best[0]:
                best = (report.max_eigenvalue, aff.to_mat(v))
            if report.feasible and report.P_min_eigenvalue >= eps and report.max_eigenvalue <= target:
                log.info("LMI feasible after attempt %d, lambda_max=%.3e", attempt, report.max_eigenvalue)
                return LmiSolution(aff.to_mat(v), report, attempt + 1)

        # projected subgradient polish on lambda_max itself
        lmax, g = aff.subgradient(v)
        for k in range(subgradient_steps):
            step = abs(lmax) / (1 + k) / max(g @ g, 1e-300)
            v = aff.to_vec(_project_psd(aff.to_mat(v - step * g), eps))
            lmax, g = aff.subgradient(v)
            if lmax < best[0]:
                best = (lmax, aff.to_mat(v))
        report = verify_lmi(problem, best[1])
        if report.feasible and report.P_min_eigenvalue >= eps:
            return LmiSolution(best[1], report, attempt + 1)

    raise LmiSolveError(
        f"no feasible P after {restarts} attempts; best lambda_max = {best[0]:.6g}",
        best[0],
        best[1],
    )


class CaseStudyDesign(NamedTuple):
    plant: PlantModel
    observer: ObserverModel
    nodes: List[NodeTriggerParams]
    lmi: LmiProblem


def case_study_lmi(cs: Optional[LtiCaseStudy] = None) -> LmiProblem:
    cs = cs or LtiCaseStudy()
    return LmiProblem(
        A=cs.A,
        C=cs.C,
        Lgain=cs.Lgain,
        Q=cs.Q_i * np.eye(2),
        mu=[cs.mu, cs.mu],
        gamma=[cs.gamma, cs.gamma],
        rho_V=cs.rho_V,
        theta=cs.theta,
        output_dims=[1, 1],
    )


def case_study_model(
    *,
    s: float = 0.0,
    w_bar: float = 1e-3,
    reset: str = "noise_aware",
    mode: str = "event_triggered",
    period: Optional[float] = None,
) -> CaseStudyDesign:
    """Three coupled oscillators, two scalar sensors, Luenberger observer.

    Triggers use ``W = |.|`` (so ``L_i = 0`` and ``beta = 2``), ``Q_i = 2``,
    ``sigma_i = 0.05``, ``lambda_i = 0.7`` and ``gamma_i = 6.1623``.
    """
    cs = LtiCaseStudy()
    plant = lti_plant(cs.A, [cs.C1, cs.C2])
    observer = luenberger_observer(cs.A, cs.Lgain, cs.C)
    nodes = [
        NodeTriggerParams(
            gamma=cs.gamma,
            lam=cs.lam,
            L=0.0,
            sigma=cs.sigma,
            s=s,
            beta_lo=1.0,
            beta_hi=1.0,
            w_bar=w_bar,
            Q=[[cs.Q_i]],
            mu=cs.mu,
            mode=mode,
            period=period,
            reset=reset,
        )
        for _ in range(2)
    ]
    return CaseStudyDesign(plant, observer, nodes, case_study_lmi(cs))
