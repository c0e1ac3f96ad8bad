"""Stabilizing controllers, Lyapunov certificates and Lipschitz estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import PlantModel
from .sensing import PerceptionMap, perceive


class ConfigError(ValueError):
    """Invalid configuration value (maps to CLI exit code 2)."""


@dataclass(frozen=True)
class Controller:
    """u = policy(y_p, y_s).  Inputs carry an optional leading batch axis.

    ``kind`` is ``"linear_feedback"`` (then ``K_p`` and ``K_s`` are set and
    ``policy`` is u = K_p y_p + K_s y_s) or ``"nonlinear"``.
    """

    policy: Callable[[np.ndarray, np.ndarray], np.ndarray]
    kind: str = "nonlinear"
    label: str = ""
    K_p: Optional[np.ndarray] = None
    K_s: Optional[np.ndarray] = None

    def __call__(self, y_p, y_s):
        return self.policy(np.asarray(y_p, float), np.asarray(y_s, float))

    @classmethod
    def linear(cls, K_p, K_s, label: str = "linear") -> "Controller":
        K_p = np.atleast_2d(np.asarray(K_p, dtype=float))
        K_s = np.atleast_2d(np.asarray(K_s, dtype=float))

        def policy(y_p, y_s):
            return np.asarray(y_p) @ K_p.T + np.asarray(y_s) @ K_s.T

        return cls(policy=policy, kind="linear_feedback", label=label, K_p=K_p, K_s=K_s)

    @classmethod
    def zero(cls, m: int) -> "Controller":
        def policy(y_p, y_s):
            y_p = np.asarray(y_p)
            return np.zeros(y_p.shape[:-1] + (m,))

        return cls(policy=policy, kind="nonlinear", label="zero")

    def gain(self, C_p: np.ndarray, C_s: np.ndarray) -> np.ndarray:
        """K C for linear feedback, with C = [C_p; C_s]."""
        if self.kind != "linear_feedback":
            raise ConfigError("gain() is only defined for linear feedback")
        return self.K_p @ C_p + self.K_s @ C_s


@dataclass(frozen=True)
class LyapunovCertificate:
    """Constants of a quadratic-type Lyapunov certificate.

    c1|x|^2 <= V(x) <= c2|x|^2,  V(h(x)) - V(x) <= -c3|x|^2,  |dV/dx| <= c4|x|
    on the ball of radius ``d``.  ``V``/``grad_V`` default to c1|x|^2 when
    c1 == c2.
    """

    c1: float
    c2: float
    c3: float
    c4: float
    d: float = 1.0
    theta: float = 0.5
    L_f: float = 0.0
    Lp_f: float = 0.0
    Lp_pi: float = 0.0
    L_pi: float = 0.0
    V: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    grad_V: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if not (0 < self.c1 <= self.c2):
            raise ConfigError("need 0 < c1 <= c2")
        if self.c3 <= 0 or self.c4 <= 0:
            raise ConfigError("c3 and c4 must be positive")
        if not (0 < self.theta < 1):
            raise ConfigError("theta must lie in (0, 1)")
        if min(self.L_f, self.Lp_f, self.Lp_pi, self.L_pi) < 0:
            raise ConfigError("Lipschitz constants must be nonnegative")

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.V is not None:
            return self.V(x)
        if self.c1 != self.c2:
            raise ConfigError("supply V when c1 != c2")
        return self.c1 * np.sum(np.asarray(x) ** 2, axis=-1)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        if self.grad_V is not None:
            return self.grad_V(x)
        if self.c1 != self.c2:
            raise ConfigError("supply grad_V when c1 != c2")
        return 2 * self.c1 * np.asarray(x)

    def replace(self, **kw) -> "LyapunovCertificate":
        from dataclasses import replace

        return replace(self, **kw)


# Constants quoted for the two case studies.
PENDULUM_PRESET = LyapunovCertificate(c1=0.5, c2=0.5, c3=0.057, c4=1.0, d=1.0, theta=0.5, L_f=1.0, Lp_f=0.33, Lp_pi=0.12)
VEHICLE_PRESET = LyapunovCertificate(c1=0.5, c2=0.5, c3=0.032, c4=1.0, d=1.0, theta=0.5, L_f=1.0, Lp_f=0.0, Lp_pi=0.23)
PENDULUM_NORM_B = 0.556
VEHICLE_NORM_B = 0.556


def closed_loop_step(model: PlantModel, controller: Controller, pmap: PerceptionMap, x, v_s=None) -> np.ndarray:
    """h(x, v_s) = f(x) + B policy(perceive(x), C_s x + v_s)."""
    x = np.asarray(x, dtype=float)
    ys = x @ model.C_s.T
    if v_s is not None:
        ys = ys + np.asarray(v_s, dtype=float)
    u = controller(perceive(pmap, x), ys)
    return model.f(x) + u @ model.B.T


def sample_ball(rng: np.random.Generator, n_samples: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples from the closed Euclidean ball."""
    d = rng.standard_normal((n_samples, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.random(n_samples) ** (1.0 / dim))[:, None]


@dataclass
class CertificateReport:
    passed: bool
    alpha_fit: float
    envelope_margin: float
    decrement_margin: float
    gradient_margin: float
    n_samples: int
    n_steps: int

    @property
    def violation_margin(self) -> float:
        """Largest violation over all checks; positive means falsified."""
        return max(self.envelope_margin, self.decrement_margin, self.gradient_margin)


def verify_certificate(
    model: PlantModel,
    controller: Controller,
    pmap: PerceptionMap,
    cert: LyapunovCertificate,
    n_samples: int = 1000,
    n_steps: int = 300,
    seed: int = 0,
    rtol: float = 1e-9,
) -> CertificateReport:
    """Sampling-based falsification of ``cert`` on the noiseless closed loop.

    Three checks on starts drawn uniformly from B_d:

    * an exponential envelope |x_t| <= sqrt(c2/c1) a^t |x_0| with a fitted
      a = ``alpha_fit`` < 1 over ``n_steps`` steps;
    * the one-step decrement V(h(x)) - V(x) <= -c3 |x|^2;
    * the gradient bound |grad V(x)| <= c4 |x|.

    Margins are normalised by |x|^2 (or |x|) so they are scale free; a
    positive margin is a counterexample.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if cert.d <= 0:
        raise ConfigError("certificate domain radius d must be positive")
    rng = np.random.default_rng(seed)
    X0 = sample_ball(rng, n_samples, model.state_dim, cert.d)
    r0 = np.linalg.norm(X0, axis=1)
    keep = r0 > 1e-12
    X0, r0 = X0[keep], r0[keep]

    nx2 = r0**2
    X1 = closed_loop_step(model, controller, pmap, X0)
    dec = (cert.value(X1) - cert.value(X0) + cert.c3 * nx2) / nx2
    decrement_margin = float(np.max(dec))
    grad = np.linalg.norm(cert.gradient(X0), axis=1)
    gradient_margin = float(np.max((grad - cert.c4 * r0) / r0))

    k = np.sqrt(cert.c2 / cert.c1)
    x = X0
    worst = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, n_steps + 1):
            x = closed_loop_step(model, controller, pmap, x)
            ratio = np.linalg.norm(x, axis=1) / (k * r0)
            ratio = np.where(np.isfinite(ratio), ratio, np.inf)
            worst = max(worst, float(np.max(ratio ** (1.0 / t))))
    alpha_fit = worst
    envelope_margin = alpha_fit - 1.0
    passed = envelope_margin < 0 and decrement_margin <= rtol and gradient_margin <= rtol
    return CertificateReport(
        passed=bool(passed),
        alpha_fit=alpha_fit,
        envelope_margin=envelope_margin,
        decrement_margin=decrement_margin,
        gradient_margin=gradient_margin,
        n_samples=int(keep.sum()),
        n_steps=n_steps,
    )


def _out_norm(a: np.ndarray) -> np.ndarray:
    if a.ndim == 3:
        return np.linalg.norm(a, ord=2, axis=(1, 2))
    return np.linalg.norm(a.reshape(a.shape[0], -1), axis=1)


def estimate_lipschitz(
    fn: Callable[[np.ndarray], np.ndarray],
    domain_radius: float,
    n_samples: int,
    dim: int,
    seed: int = 0,
    local_scale: float = 1e-3,
) -> float:
    """Empirical Lipschitz constant of ``fn`` on the ball of ``domain_radius``.

    Half of the pairs are independent uniform draws, the other half are small
    perturbations of a uniform draw (which find steep local slopes).  Matrix
    valued maps are compared in spectral norm.  The result is a lower bound
    on the true constant.
    """
    if n_samples < 2:
        raise ConfigError("n_samples must be >= 2")
    rng = np.random.default_rng(seed)
    n_pairs = n_samples // 2
    n_far = (n_pairs + 1) // 2
    X = sample_ball(rng, n_pairs, dim, domain_radius)
    Y = np.empty_like(X)
    Y[:n_far] = sample_ball(rng, n_far, dim, domain_radius)
    step = sample_ball(rng, n_pairs - n_far, dim, local_scale * domain_radius)
    Y[n_far:] = X[n_far:] + step
    # keep local partners inside the domain
    nrm = np.linalg.norm(Y, axis=1, keepdims=True)
    Y = np.where(nrm > domain_radius, Y * domain_radius / nrm, Y)
    dist = np.linalg.norm(X - Y, axis=1)
    ok = dist > 0
    num = _out_norm(np.asarray(fn(X[ok])) - np.asarray(fn(Y[ok])))
    if not ok.any():
        return 0.0
    return float(np.max(num / dist[ok]))
