"""Per-node transmission logic for dynamic event-triggered estimation.

Each sensor node carries a timer ``tau`` and a nonnegative trigger variable
``eta``.  Between transmissions ``eta`` integrates :func:`psi_rate`; a node
transmits once ``eta`` has run down to zero *and* its timer has passed the
guaranteed minimum inter-event time (MIET).  The MIET itself comes from the
scalar Riccati equation

    dphi/dtau = -2 L phi - gamma (phi**2 + 1),   phi(0) = 1/lambda

as the time at which ``phi`` reaches ``lambda`` (:func:`compute_miet`, with
:func:`phi_ode_oracle` as an independent numerical check).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

MODES = ("event_triggered", "time_triggered", "periodic")
RESETS = ("zero", "noise_aware")


class InfeasibleTuning(ValueError):
    """Trigger constants for which no finite MIET exists."""


def _check_miet_args(L, gamma, lam):
    if not L >= 0:
        raise ValueError(f"L must be >= 0, got {L}")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    if not 0 < lam < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")


def compute_miet(L: float, gamma: float, lam: float) -> float:
    """Closed-form minimum inter-event time.

    Parameters
    ----------
    L : float
        Growth constant of the network-induced error (``L >= 0``).
    gamma : float
        L2-gain from the network-induced error to the observer (``> 0``).
    lam : float
        Tuning parameter in ``(0, 1)``.

    Returns
    -------
    float
        Time for ``phi`` to travel from ``1/lam`` down to ``lam``.  Uses the
        arctan / rational / arctanh branch depending on the sign of
        ``gamma - L``; at ``L == 0`` this is
        ``(arctan(1/lam) - arctan(lam)) / gamma``.
    """
    _check_miet_args(L, gamma, lam)
    # With a = L/gamma and u = phi + a the equation reads
    # du/dtau = -gamma (u**2 + 1 - a**2); u runs from u0 = 1/lam + a to
    # u1 = lam + a.  The arctan/arctanh differences are folded into a single
    # call so that neither L -> 0 nor gamma -> L loses precision.
    a = L / gamma
    u0, u1 = 1.0 / lam + a, lam + a
    du, uu = u0 - u1, u0 * u1
    if gamma == L:
        value = du / (uu * gamma)
    elif gamma > L:
        k = math.sqrt((1.0 - a) * (1.0 + a))
        value = math.atan2(k * du, k * k + uu) / (gamma * k)
    else:
        k = math.sqrt((a - 1.0) * (a + 1.0))
        arg = k * du / (uu - k * k)
        if not 0 <= arg < 1.0:
            raise InfeasibleTuning(
                f"arctanh argument {arg} outside [0, 1) for L={L}, gamma={gamma}, lambda={lam}"
            )
        value = math.atanh(arg) / (gamma * k)
    if not (math.isfinite(value) and value > 0):
        raise InfeasibleTuning(f"non-finite MIET for L={L}, gamma={gamma}, lambda={lam}")
    return value


def _phi_rhs(L, gamma):
    def rhs(tau, phi):
        return -2.0 * L * phi - gamma * (phi * phi + 1.0)

    return rhs


def phi_ode_oracle(L: float, gamma: float, lam: float, tol: float = 1e-12) -> float:
    """MIET obtained by integrating the ``phi`` equation numerically.

    Independent of :func:`compute_miet`: a DOP853 integration from
    ``1/lam`` with a terminal event at ``phi == lam``.
    """
    _check_miet_args(L, gamma, lam)
    # phi decreases at least as fast as -gamma (phi^2 + 1), so the crossing
    # happens before (arctan(1/lam) - arctan(lam)) / gamma <= pi / (2 gamma).
    horizon = math.pi / gamma + 1.0

    def reached(tau, phi):
        return phi[0] - lam

    reached.terminal = True
    reached.direction = -1
    sol = solve_ivp(
        lambda t, y: [_phi_rhs(L, gamma)(t, y[0])],
        (0.0, horizon),
        [1.0 / lam],
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2,
        events=reached,
    )
    if not sol.t_events[0].size:
        raise InfeasibleTuning(
            f"phi did not reach lambda within {horizon:g} for L={L}, gamma={gamma}, lambda={lam}"
        )
    return float(sol.t_events[0][0])


def phi_value(tau, L: float, gamma: float, lam: float, tau_miet: Optional[float] = None):
    """Closed-form ``phi(tau)``; equals ``lam`` from ``tau_miet`` onwards.

    Works on scalars and arrays.  With ``a = L / gamma`` and ``u = phi + a``
    the equation becomes ``du/dtau = -gamma (u**2 + 1 - a**2)``, which has a
    tan, rational or coth solution depending on the sign of ``1 - a**2``.
    """
    if tau_miet is None:
        tau_miet = compute_miet(L, gamma, lam)
    tau = np.asarray(tau, dtype=float)
    t = np.minimum(tau, tau_miet)
    a = L / gamma
    u0 = 1.0 / lam + a
    d = 1.0 - a * a
    if abs(d) < 1e-12:
        u = 1.0 / (1.0 / u0 + gamma * t)
    elif d > 0:
        k = math.sqrt(d)
        u = k * np.tan(math.atan(u0 / k) - gamma * k * t)
    else:
        k = math.sqrt(-d)
        u = k / np.tanh(gamma * k * t + math.atanh(k / u0))
    phi = np.where(tau >= tau_miet, lam, u - a)
    return float(phi) if phi.ndim == 0 else phi


@dataclass(frozen=True)
class PhiTrajectory:
    tau: np.ndarray
    phi: np.ndarray


def phi_trajectory(L, gamma, lam, tau_grid, tau_miet=None) -> PhiTrajectory:
    tau = np.asarray(tau_grid, dtype=float)
    return PhiTrajectory(tau, np.asarray(phi_value(tau, L, gamma, lam, tau_miet), dtype=float))


def phi_ode_trajectory(L, gamma, lam, tau_grid, tol=1e-11) -> PhiTrajectory:
    """``phi`` on ``tau_grid`` by numerical integration of the switched equation.

    The right-hand side is switched off (omega = 1) once ``phi`` hits ``lam``,
    which is exactly the selection used by the trigger flow.
    """
    tau = np.asarray(tau_grid, dtype=float)
    t_hit = phi_ode_oracle(L, gamma, lam, tol)
    phi = np.full(tau.shape, lam)
    early = tau < t_hit
    if early.any():
        sol = solve_ivp(
            lambda t, y: [_phi_rhs(L, gamma)(t, y[0])],
            (0.0, t_hit),
            [1.0 / lam],
            method="DOP853",
            rtol=tol,
            atol=tol * 1e-2,
            dense_output=True,
        )
        phi[early] = sol.sol(tau[early])[0]
    return PhiTrajectory(tau, phi)


def omega(tau: float, tau_miet: float) -> float:
    """Single-valued selection of the switching function: 0 before the MIET, 1 from it on."""
    return 1.0 if tau >= tau_miet else 0.0


def gamma_bar(gamma: float, lam: float, L: float) -> float:
    return 2.0 * gamma * lam * L + gamma * gamma * (1.0 + lam * lam)


def beta_coeff(beta_lo: float, beta_hi: float) -> float:
    return 2.0 * beta_hi**2 / beta_lo**2


@dataclass(frozen=True, eq=False)
class NodeTriggerParams:
    """Constants of one sensor node's trigger.

    ``tau_miet`` is derived from ``(L, gamma, lam)`` when left as ``None``;
    a user override may only shorten it.  ``tau_dwell`` is the arbitrary
    positive dwell constant of the general jump set and defaults to the MIET.
    ``Q`` is the weight of the quadratic output-error term and fixes the
    output dimension of the node.

    Optional callables replace the default concrete forms: ``W`` (defaults to
    the Euclidean norm), ``rho_fn`` (defaults to ``q' Q q``) and ``sigma_fn``
    (defaults to ``sigma * eta``).
    """

    gamma: float
    lam: float
    L: float = 0.0
    tau_miet: Optional[float] = None
    sigma: float = 0.0
    s: float = 0.0
    beta_lo: float = 1.0
    beta_hi: float = 1.0
    w_bar: float = 0.0
    Q: np.ndarray = field(default_factory=lambda: np.eye(1))
    mu: float = 0.0
    mode: str = "event_triggered"
    period: Optional[float] = None
    reset: str = "zero"
    tau_dwell: Optional[float] = None
    W: Optional[Callable] = None
    rho_fn: Optional[Callable] = None
    sigma_fn: Optional[Callable] = None

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        if not np.allclose(Q, Q.T) or np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("Q must be symmetric positive definite")
        object.__setattr__(self, "Q", Q)
        derived = compute_miet(self.L, self.gamma, self.lam)
        if self.tau_miet is None:
            object.__setattr__(self, "tau_miet", derived)
        elif not 0 < self.tau_miet <= derived * (1 + 1e-12):
            raise ValueError(
                f"tau_miet={self.tau_miet} must lie in (0, {derived}] for the given L, gamma, lambda"
            )
        if self.tau_dwell is None:
            object.__setattr__(self, "tau_dwell", self.tau_miet)
        elif not 0 < self.tau_dwell <= self.tau_miet:
            raise ValueError("tau_dwell must lie in (0, tau_miet]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "periodic":
            if self.period is None or not self.tau_dwell <= self.period <= self.tau_miet:
                raise ValueError(
                    f"periodic mode needs period in [{self.tau_dwell}, {self.tau_miet}], got {self.period}"
                )
        if self.reset not in RESETS:
            raise ValueError(f"reset must be one of {RESETS}, got {self.reset!r}")
        for name in ("sigma", "s", "w_bar", "mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.beta_lo <= 0 or self.beta_hi < self.beta_lo:
            raise ValueError("need 0 < beta_lo <= beta_hi")

    @property
    def dim(self) -> int:
        return self.Q.shape[0]

    @property
    def gamma_bar(self) -> float:
        return gamma_bar(self.gamma, self.lam, self.L)

    @property
    def beta(self) -> float:
        return beta_coeff(self.beta_lo, self.beta_hi)

    @property
    def threshold(self) -> float:
        """Timer value from which the node may transmit."""
        return self.period if self.mode == "periodic" else self.tau_miet

    @property
    def uses_default_forms(self) -> bool:
        return self.W is None and self.rho_fn is None and self.sigma_fn is None

    def W_value(self, eps) -> float:
        eps = np.atleast_1d(eps)
        if self.W is not None:
            return float(self.W(eps))
        return float(np.linalg.norm(eps))

    def phi(self, tau):
        return phi_value(tau, self.L, self.gamma, self.lam, self.tau_miet)


def psi_rate(
    params: NodeTriggerParams,
    q_i,
    eps_tilde_i,
    tau_i: float,
    eta_i: float,
    omega_value: Optional[float] = None,
) -> float:
    """Flow of the trigger variable ``eta_i``.

    ``rho(|q|) - omega(tau) * gamma_bar * beta * W(eps_tilde)**2 - sigma(eta) + s``
    with ``rho(q) = q' Q q`` and ``sigma(eta) = sigma * eta`` unless callables
    are supplied.  ``omega_value`` pins the switching function, e.g. to keep
    it constant across an integration segment.
    """
    q_i = np.atleast_1d(np.asarray(q_i, dtype=float))
    if params.rho_fn is not None:
        rho = float(params.rho_fn(q_i))
    else:
        rho = float(q_i @ params.Q @ q_i)
    sig = float(params.sigma_fn(eta_i)) if params.sigma_fn is not None else params.sigma * eta_i
    W = params.W_value(eps_tilde_i)
    return (
        rho
        - (omega(tau_i, params.tau_miet) if omega_value is None else omega_value) * params.gamma_bar * params.beta * W * W
        - sig
        + params.s
    )


def eta_reset(params: NodeTriggerParams, eps_tilde_i) -> float:
    """Value of ``eta_i`` right after node ``i`` transmits.

    ``zero``: 0.  ``noise_aware``: ``gamma lam (beta_lo max(|eps_tilde| - 2 w_bar, 0))**2``,
    which stays below ``gamma lam W(eps)**2`` whenever both the current and the
    last sampled noise are bounded by ``w_bar``.
    """
    if params.reset == "zero":
        return 0.0
    mag = float(np.linalg.norm(np.atleast_1d(eps_tilde_i)))
    excess = params.beta_lo * max(mag - 2.0 * params.w_bar, 0.0)
    return params.gamma * params.lam * excess * excess


def jump_condition(params: NodeTriggerParams, tau_i: float, eta_i: float, eta_tol: float = 0.0) -> bool:
    """Whether node ``i`` transmits under the greedy selection of its mode."""
    if params.mode == "event_triggered":
        return eta_i <= eta_tol and tau_i >= params.tau_miet
    return tau_i >= params.threshold


def guard_values(nodes: Sequence[NodeTriggerParams], tau, eta, eta_tol: float = 0.0) -> np.ndarray:
    """Per-node guard, nonnegative exactly where :func:`jump_condition` holds."""
    tau = np.asarray(tau, dtype=float)
    eta = np.asarray(eta, dtype=float)
    out = np.empty(len(nodes))
    for i, p in enumerate(nodes):
        g = tau[i] - p.threshold
        if p.mode == "event_triggered":
            g = min(g, eta_tol - eta[i])
        out[i] = g
    return out
