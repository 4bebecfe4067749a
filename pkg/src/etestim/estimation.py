"""Plant, observer and error-coordinate models.

A plant ``x' = f_p(x, v)`` is measured by ``N`` nodes through
``y_i = h_p_i(x)``; the remote observer ``z' = f_o(z, yhat)`` produces the
estimate ``chi = h_o(z)``.  Between transmissions the held output estimate
``yhat`` follows the model-based holding function :func:`holding_rate`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np


def fd_jacobian(fun: Callable, x) -> np.ndarray:
    """Central finite-difference Jacobian, step ``1e-6 * (1 + |x_k|)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        h = 1e-6 * (1.0 + abs(x[k]))
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        J[:, k] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2.0 * h)
    return J


@dataclass(frozen=True, eq=False)
class PlantModel:
    """``x' = f_p(x, v)``, ``y_i = h_p[i](x)`` for nodes ``i = 0..N-1``.

    ``jac_h_p`` may be omitted, in which case Jacobians of the output maps are
    taken by central finite differences.  ``matrices`` is set by
    :func:`lti_plant` and enables the fast linear path of the simulator.
    """

    n: int
    output_dims: Sequence[int]
    f_p: Callable
    h_p: Sequence[Callable]
    p: int = 0
    jac_h_p: Optional[Sequence[Callable]] = None
    matrices: Optional[dict] = None

    def __post_init__(self):
        if len(self.h_p) != len(self.output_dims):
            raise ValueError("one output map per node is required")
        if self.jac_h_p is not None and len(self.jac_h_p) != len(self.h_p):
            raise ValueError("jac_h_p must match h_p node by node")

    @property
    def N(self) -> int:
        return len(self.output_dims)

    @property
    def m(self) -> int:
        return int(sum(self.output_dims))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.output_dims)]).astype(int)

    def node_slice(self, i: int) -> slice:
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))

    def output(self, x) -> np.ndarray:
        return np.concatenate([np.atleast_1d(h(x)) for h in self.h_p]).astype(float)

    def output_jacobian(self, x, node: Optional[int] = None) -> np.ndarray:
        nodes = range(self.N) if node is None else [node]
        blocks = []
        for i in nodes:
            if self.jac_h_p is not None:
                J = np.atleast_2d(np.asarray(self.jac_h_p[i](x), dtype=float))
            else:
                J = fd_jacobian(self.h_p[i], x)
            if J.shape != (self.output_dims[i], self.n):
                raise ValueError(
                    f"Jacobian of node {i} has shape {J.shape}, expected {(self.output_dims[i], self.n)}"
                )
            blocks.append(J)
        return np.vstack(blocks)


@dataclass(frozen=True, eq=False)
class ObserverModel:
    """``z' = f_o(z, yhat)``, ``chi = h_o(z)``."""

    q: int
    f_o: Callable
    h_o: Callable
    jac_h_o: Optional[Callable] = None
    matrices: Optional[dict] = None

    def estimate_jacobian(self, z) -> np.ndarray:
        if self.jac_h_o is not None:
            return np.atleast_2d(np.asarray(self.jac_h_o(z), dtype=float))
        return fd_jacobian(self.h_o, z)


def lti_plant(A, C_blocks: Sequence, B=None) -> PlantModel:
    """Linear plant ``x' = A x + B v`` measured by ``y_i = C_i x``."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"A must be square, got {A.shape}")
    Cs = [np.atleast_2d(np.asarray(C, dtype=float)) for C in C_blocks]
    for i, C in enumerate(Cs):
        if C.shape[1] != n:
            raise ValueError(f"C_{i + 1} has {C.shape[1]} columns, expected {n}")
    B = np.zeros((n, 0)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] != n:
        raise ValueError(f"B must have {n} rows")

    def f_p(x, v=None):
        out = A @ x
        if B.shape[1] and v is not None:
            out = out + B @ v
        return out

    return PlantModel(
        n=n,
        output_dims=[C.shape[0] for C in Cs],
        f_p=f_p,
        h_p=[(lambda x, C=C: C @ x) for C in Cs],
        p=B.shape[1],
        jac_h_p=[(lambda x, C=C: C) for C in Cs],
        matrices={"A": A, "B": B, "C": np.vstack(Cs)},
    )


def luenberger_observer(A, Lgain, C) -> ObserverModel:
    """``chi' = A chi + L (C chi - yhat)`` with ``chi = z``."""
    A = np.asarray(A, dtype=float)
    Lgain = np.atleast_2d(np.asarray(Lgain, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    if Lgain.shape != (n, C.shape[0]):
        raise ValueError(f"L must have shape {(n, C.shape[0])}, got {Lgain.shape}")
    eye = np.eye(n)
    return ObserverModel(
        q=n,
        f_o=lambda z, yhat: A @ z + Lgain @ (C @ z - yhat),
        h_o=lambda z: np.asarray(z, dtype=float),
        jac_h_o=lambda z: eye,
        matrices={"A": A, "L": Lgain, "C": C},
    )


# Three marginally stable oscillators observed by two scalar sensors.
CASE_STUDY_A = np.array(
    [
        [0, 2, 0, 0, 0, 1],
        [-2, 0, 1, 0, 0, 0],
        [0, -1, 0, 2, 0, 0],
        [0, 0, -2, 0, 1, 0],
        [0, 0, 0, -1, 0, 2],
        [-1, 0, 0, 0, -2, 0],
    ],
    dtype=float,
)
CASE_STUDY_C1 = np.array([[1, 0, 0, 0, 0, 0]], dtype=float)
CASE_STUDY_C2 = np.array([[0, 0, 1, 0, 0, 0]], dtype=float)
CASE_STUDY_L = np.array(
    [[-51, -92, 41, 76, 205, -78], [41, 86, -51, -88, -205, 72]], dtype=float
).T


@dataclass(frozen=True, eq=False)
class LtiCaseStudy:
    A: np.ndarray = CASE_STUDY_A
    C1: np.ndarray = CASE_STUDY_C1
    C2: np.ndarray = CASE_STUDY_C2
    Lgain: np.ndarray = CASE_STUDY_L
    mu: float = 0.5
    rho_V: float = 2.0
    Q_i: float = 2.0
    gamma: float = 6.1623
    theta: float = 2.39e4
    lam: float = 0.7
    sigma: float = 0.05

    @property
    def C(self) -> np.ndarray:
        return np.vstack([self.C1, self.C2])


def observability_rank(A, C) -> int:
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    blocks = [C]
    for _ in range(A.shape[0] - 1):
        blocks.append(blocks[-1] @ A)
    return int(np.linalg.matrix_rank(np.vstack(blocks)))


@dataclass(frozen=True)
class ErrorCoordinates:
    """``e = chi - x``; ``eps = yhat_noise_free - y``; ``eps_tilde = yhat - y_measured``; ``q`` per node."""

    e: np.ndarray
    eps: np.ndarray
    eps_tilde: np.ndarray
    q: List[np.ndarray]


def holding_rate(obs: ObserverModel, plant: PlantModel, z) -> np.ndarray:
    """Rate of the held output estimate: ``dh_p_i/dx (chi) f_p(chi, 0)`` stacked over nodes."""
    chi = np.asarray(obs.h_o(z), dtype=float)
    drift = np.asarray(plant.f_p(chi, np.zeros(plant.p)), dtype=float)
    J = plant.output_jacobian(chi)
    if J.shape[1] != drift.shape[0]:
        raise ValueError(f"Jacobian has {J.shape[1]} columns but f_p returned {drift.shape[0]} entries")
    return J @ drift


def observer_rate(obs: ObserverModel, z, yhat) -> np.ndarray:
    return np.asarray(obs.f_o(np.asarray(z, dtype=float), np.asarray(yhat, dtype=float)), dtype=float)


def derived_errors(plant: PlantModel, obs: ObserverModel, x, z, yhat, what, w) -> ErrorCoordinates:
    x = np.asarray(x, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    what = np.asarray(what, dtype=float)
    w = np.asarray(w, dtype=float)
    chi = np.asarray(obs.h_o(z), dtype=float)
    y = plant.output(x)
    y_est = plant.output(chi)
    y_meas = y + w
    q_all = y_est - y_meas
    return ErrorCoordinates(
        e=chi - x,
        eps=(yhat - what) - y,
        eps_tilde=yhat - y_meas,
        q=[q_all[plant.node_slice(i)] for i in range(plant.N)],
    )


def error_flow_g(plant: PlantModel, obs: ObserverModel, z, e, eps, what, v=None) -> np.ndarray:
    """Time derivative of the noise-free network-induced error during flow.

    Reconstructs ``x = h_o(z) - e`` and returns
    ``holding_rate(z) - dh_p/dx(x) f_p(x, v)``.  For linear output maps this is
    ``dh_p/dx (f_p(h_o(z), 0) - f_p(x, v))``; it does not depend on ``eps`` or
    ``what``, which are accepted for signature compatibility.
    """
    chi = np.asarray(obs.h_o(z), dtype=float)
    x = chi - np.asarray(e, dtype=float)
    v = np.zeros(plant.p) if v is None else np.asarray(v, dtype=float)
    return holding_rate(obs, plant, z) - plant.output_jacobian(x) @ np.asarray(plant.f_p(x, v), dtype=float)
