"""Small nonlinear models loaded through the ``plugin`` model kind."""
import numpy as np

from etestim.estimation import ObserverModel, PlantModel


def _outputs():
    # node 1 measures the angle, node 2 a nonlinear mix of rate and angle
    return [lambda x: np.array([x[0]]), lambda x: np.array([x[1] + 0.2 * np.sin(x[0])])]


def pendulum(damping=0.5, gain=3.0, analytic_jacobians=False):
    """Damped pendulum with a disturbance torque and a copy observer."""

    def f_p(x, v=None):
        u = 0.0 if v is None or len(v) == 0 else v[0]
        return np.array([x[1], -np.sin(x[0]) - damping * x[1] + u])

    h_p = _outputs()
    jac = None
    if analytic_jacobians:
        jac = [lambda x: np.array([[1.0, 0.0]]), lambda x: np.array([[0.2 * np.cos(x[0]), 1.0]])]
    plant = PlantModel(n=2, output_dims=[1, 1], f_p=f_p, h_p=h_p, p=1, jac_h_p=jac)

    def f_o(z, yhat):
        yz = np.concatenate([h(z) for h in h_p])
        return f_p(z) - gain * (yz - yhat)

    observer = ObserverModel(q=2, f_o=f_o, h_o=lambda z: np.asarray(z, dtype=float))
    return plant, observer


def pendulum_dict(**kw):
    plant, observer = pendulum(**kw)
    return {"plant": plant, "observer": observer}


def blowup():
    """Plant whose rates are NaN everywhere."""
    plant = PlantModel(
        n=1, output_dims=[1], f_p=lambda x, v=None: np.array([np.nan]), h_p=[lambda x: np.asarray(x)]
    )
    observer = ObserverModel(q=1, f_o=lambda z, yhat: -z, h_o=lambda z: np.asarray(z, dtype=float))
    return plant, observer


def not_a_model():
    return "nothing useful"
