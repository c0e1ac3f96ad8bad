"""Case-study presets: inverted pendulum, lane-keeping vehicle, generic LTI and a polynomial example map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_are, solve_discrete_lyapunov

from .control import Controller, LyapunovCertificate
from .dynamics import PlantModel
from .sensing import PerceptionMap

G = 9.81


def pendulum_model(
    dt: float = 0.01,
    m: float = 0.2,
    b: float = 0.1,
    r: float = 0.3,
    g: float = G,
    sigma_w: float = 1e-5,
    sigma_v: float = 1e-4,
) -> PlantModel:
    """Forward-Euler inverted pendulum, state [theta, omega], input torque.

    theta'' = (g/r) sin(theta) - b/(m r^2) theta' + u/(m r^2)
    """
    a = g / r
    damp = b / (m * r**2)

    def f(x):
        x = np.asarray(x, dtype=float)
        th, om = x[..., 0], x[..., 1]
        return np.stack([th + dt * om, om + dt * (a * np.sin(th) - damp * om)], axis=-1)

    def jac(x):
        x = np.asarray(x, dtype=float)
        th = x[..., 0]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1.0
        J[..., 0, 1] = dt
        J[..., 1, 0] = dt * a * np.cos(th)
        J[..., 1, 1] = 1.0 - dt * damp
        return J

    B = np.array([[0.0], [dt / (m * r**2)]])
    return PlantModel(
        f=f,
        B=B,
        C_s=np.array([[0.0, 1.0]]),
        sigma_w=sigma_w * np.eye(2),
        sigma_vs=np.array([[sigma_v]]),
        f_jacobian=jac,
        dt=dt,
        name="pendulum",
        params=dict(m=m, b=b, r=r, g=g),
    )


def pendulum_controller(model: PlantModel, k1: float = 18.0, k2: float = 15.0) -> Controller:
    """Gravity-compensating PD law on perceived angle and measured rate.

    u = -m r^2 (g/r sin(theta) + k1 theta + k2 omega), giving the linear
    closed loop theta'' = -k1 theta - (k2 + b/(m r^2)) theta'.
    """
    p = model.params
    mr2 = p["m"] * p["r"] ** 2
    a = p["g"] / p["r"]

    def policy(y_p, y_s):
        th = np.asarray(y_p)[..., :1]
        om = np.asarray(y_s)[..., :1]
        return -mr2 * (a * np.sin(th) + k1 * th + k2 * om)

    return Controller(policy=policy, kind="nonlinear", label=f"pendulum_pd(k1={k1},k2={k2})")


def pendulum_certificate(model: PlantModel, k1: float = 18.0, k2: float = 15.0, c3: float = 0.9, d: float = 1.0) -> LyapunovCertificate:
    """Quadratic certificate V = x^T P x from the discrete Lyapunov equation of the linear closed loop.

    P solves Acl^T P Acl - P = -I, so c3 = 1 holds for the exact linear loop;
    the default c3 = 0.9 leaves room for the perception error.
    """
    p = model.params
    mr2 = p["m"] * p["r"] ** 2
    A = model.jacobian(np.zeros(2))
    K = -mr2 * np.array([[p["g"] / p["r"] + k1, k2]])
    Acl = A + model.B @ K
    P = solve_discrete_lyapunov(Acl.T, np.eye(2))
    lo, hi = np.linalg.eigvalsh(P)

    def V(x):
        return np.einsum("...i,ij,...j->...", x, P, x)

    def grad_V(x):
        return 2 * np.asarray(x) @ P

    return LyapunovCertificate(c1=lo, c2=hi, c3=c3, c4=2 * hi, d=d, V=V, grad_V=grad_V)


def pendulum_perception(gamma: float = 0.01, safe_radius: float = 1.0, seed: int = 0) -> PerceptionMap:
    return PerceptionMap.tanh([[1.0, 0.0]], gamma, safe_radius, seed=seed, depends_on=[0])


VEHICLE_SPEED = 25.0


def vehicle_model(
    dt: float = 0.01,
    lf: float = 1.1,
    lr: float = 1.73,
    speed: float = VEHICLE_SPEED,
    sigma_w: float = 1e-4,
    sigma_v: float = 1e-4,
) -> PlantModel:
    """Kinematic bicycle in a frame moving with the nominal speed.

    State [x, y, psi, v]: longitudinal offset from the moving frame, lateral
    offset from lane centre, heading, speed deviation.  Inputs [delta_f, a].
    The slip angle is linearised in the steering angle, beta = k delta_f with
    k = lr / (lf + lr), so the model is control affine.
    """
    V = speed
    kb = lr / (lf + lr)

    def f(x):
        x = np.asarray(x, dtype=float)
        px, py, psi, v = (x[..., i] for i in range(4))
        sp = V + v
        return np.stack(
            [px + dt * (sp * np.cos(psi) - V), py + dt * sp * np.sin(psi), psi, v], axis=-1
        )

    def jac(x):
        x = np.asarray(x, dtype=float)
        psi, v = x[..., 2], x[..., 3]
        sp = V + v
        J = np.zeros(x.shape[:-1] + (4, 4))
        J[..., 0, 0] = 1.0
        J[..., 0, 2] = -dt * sp * np.sin(psi)
        J[..., 0, 3] = dt * np.cos(psi)
        J[..., 1, 1] = 1.0
        J[..., 1, 2] = dt * sp * np.cos(psi)
        J[..., 1, 3] = dt * np.sin(psi)
        J[..., 2, 2] = 1.0
        J[..., 3, 3] = 1.0
        return J

    B = np.array(
        [
            [0.0, 0.0],
            [V * dt * kb, 0.0],
            [(V / lr) * dt * kb, 0.0],
            [0.0, dt],
        ]
    )
    return PlantModel(
        f=f,
        B=B,
        C_s=np.array([[0.0, 0.0, 1.0, 0.0]]),
        sigma_w=sigma_w * np.eye(4),
        sigma_vs=np.array([[sigma_v]]),
        f_jacobian=jac,
        dt=dt,
        name="vehicle",
        params=dict(lf=lf, lr=lr, speed=V),
    )


def lateral_lqr_gain(model: PlantModel, q=(1.0, 1.0), r: float = 1.0) -> np.ndarray:
    """Discrete LQR steering gain for the (y, psi) subsystem linearised at rest."""
    A = model.jacobian(np.zeros(4))[np.ix_([1, 2], [1, 2])]
    Bl = model.B[[1, 2], :1]
    P = solve_discrete_are(A, Bl, np.diag(q), np.array([[r]]))
    return np.linalg.solve(r + Bl.T @ P @ Bl, Bl.T @ P @ A)[0]


def vehicle_controller(model: PlantModel, q=(1.0, 1.0), r: float = 1.0) -> Controller:
    """Steering-only linear feedback: delta = -k_y y_hat - k_psi psi_hat, a = 0."""
    k_y, k_psi = lateral_lqr_gain(model, q, r)
    K_p = np.array([[-k_y], [0.0]])
    K_s = np.array([[-k_psi], [0.0]])
    return Controller.linear(K_p, K_s, label="vehicle_lqr")


def vehicle_perception(gamma: float = 0.01, safe_radius: float = 1.0, seed: int = 0) -> PerceptionMap:
    return PerceptionMap.tanh([[0.0, 1.0, 0.0, 0.0]], gamma, safe_radius, seed=seed, depends_on=[1])


def lti_model(A, B, C_s, sigma_w, sigma_vs, dt: float = 1.0, name: str = "lti") -> PlantModel:
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def f(x):
        return np.asarray(x, dtype=float) @ A.T

    def jac(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(A, x.shape[:-1] + A.shape).copy()

    return PlantModel(f=f, B=B, C_s=C_s, sigma_w=sigma_w, sigma_vs=sigma_vs, f_jacobian=jac, A=A, dt=dt, name=name)


def example1_map(x):
    """f(x) = [2 x1 + x1 x2^2, 0.5 x2]."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([2 * x1 + x1 * x2**2, 0.5 * x2], axis=-1)


def example1_V(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0] ** 2 - x[..., 1] ** 2


def example1_grad_V(x):
    x = np.asarray(x, dtype=float)
    return np.stack([2 * x[..., 0], -2 * x[..., 1]], axis=-1)


def example1_model(sigma: float = 0.0) -> PlantModel:
    def jac(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = 2 + x2**2
        J[..., 0, 1] = 2 * x1 * x2
        J[..., 1, 1] = 0.5
        return J

    return PlantModel(
        f=example1_map,
        B=np.eye(2),
        C_s=np.eye(2),
        sigma_w=sigma * np.eye(2),
        sigma_vs=sigma * np.eye(2),
        f_jacobian=jac,
        name="example1",
    )


@dataclass(frozen=True)
class CaseStudy:
    """Plant, controller and perception bundle for a named preset."""

    name: str
    model: PlantModel
    controller: Controller
    pmap: PerceptionMap
    s0: np.ndarray
    alpha: float
    track_index: int


def case_study(name: str, seed: int = 0, **overrides) -> CaseStudy:
    if name == "pendulum":
        model = pendulum_model(**{k: v for k, v in overrides.items() if k in ("dt", "sigma_w", "sigma_v")})
        pm = pendulum_perception(overrides.get("gamma", 0.01), overrides.get("safe_radius", 1.0), seed=seed)
        return CaseStudy(name, model, pendulum_controller(model), pm, np.array([0.001, 0.001]), 0.5, 0)
    if name == "vehicle":
        model = vehicle_model(**{k: v for k, v in overrides.items() if k in ("dt", "sigma_w", "sigma_v")})
        pm = vehicle_perception(overrides.get("gamma", 0.01), overrides.get("safe_radius", 1.0), seed=seed)
        return CaseStudy(name, model, vehicle_controller(model), pm, 0.001 * np.array([0.0, 1.0, 1.0, 0.0]), 1.0, 1)
    raise KeyError(f"unknown case study {name!r}; valid: ['pendulum', 'vehicle']")


CASE_STUDIES = ("pendulum", "vehicle")
