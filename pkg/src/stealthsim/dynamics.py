"""Discrete-time plant models, noise streams and the closed-loop stepping engine.

Every map in this module works on batches: states are arrays whose last axis
is the state dimension, so ``f(X)`` with ``X.shape == (N, n)`` advances ``N``
independent runs at once.  The single-run entry points are thin wrappers.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .sensing import PerceptionMap, perceive

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e6
FD_STEP = 1e-6

STREAM_CODES = {"process": 1, "sensor": 2, "perception": 3, "estimation": 4, "initial": 5}


class ContractViolation(ValueError):
    """Raised when array shapes do not match the model they are fed to."""


def _is_psd(M: np.ndarray, tol: float = 1e-12) -> bool:
    if not np.allclose(M, M.T, atol=tol, rtol=0):
        return False
    return bool(np.min(np.linalg.eigvalsh(M)) >= -tol)


def finite_difference_jacobian(f: Callable, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x`` (batched over leading axes)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    cols = []
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h
        cols.append((f(x + dx) - f(x - dx)) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class PlantModel:
    """x_{t+1} = f(x_t) + B u_t + w_t,  y^s_t = C_s x_t + v^s_t.

    ``A`` is set only for linear drifts f(x) = A x; code paths that rely on
    exact linearity (the attacker's recurrence collapsing to A s) check it.
    """

    f: Callable[[np.ndarray], np.ndarray]
    B: np.ndarray
    C_s: np.ndarray
    sigma_w: np.ndarray
    sigma_vs: np.ndarray
    f_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    A: Optional[np.ndarray] = None
    dt: float = 1.0
    name: str = "plant"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("B", "C_s", "sigma_w", "sigma_vs"):
            object.__setattr__(self, attr, np.atleast_2d(np.asarray(getattr(self, attr), dtype=float)))
        n = self.B.shape[0]
        if self.C_s.shape[1] != n:
            raise ContractViolation(f"C_s has {self.C_s.shape[1]} columns, state_dim is {n}")
        if self.sigma_w.shape != (n, n):
            raise ContractViolation(f"sigma_w must be {n}x{n}, got {self.sigma_w.shape}")
        s = self.C_s.shape[0]
        if self.sigma_vs.shape != (s, s):
            raise ContractViolation(f"sigma_vs must be {s}x{s}, got {self.sigma_vs.shape}")
        if not (_is_psd(self.sigma_w) and _is_psd(self.sigma_vs)):
            raise ValueError("noise covariances must be symmetric positive semidefinite")
        if self.A is not None:
            object.__setattr__(self, "A", np.asarray(self.A, dtype=float))

    @property
    def state_dim(self) -> int:
        return self.B.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    @property
    def sensor_dim(self) -> int:
        return self.C_s.shape[0]

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.f_jacobian is not None:
            return self.f_jacobian(np.asarray(x, dtype=float))
        return finite_difference_jacobian(self.f, x)

    def with_noise(self, sigma_w=None, sigma_vs=None) -> "PlantModel":
        from dataclasses import replace

        return replace(
            self,
            sigma_w=self.sigma_w if sigma_w is None else sigma_w,
            sigma_vs=self.sigma_vs if sigma_vs is None else sigma_vs,
        )


def _check_last(arr: np.ndarray, dim: int, what: str):
    if arr.shape[-1] != dim:
        raise ContractViolation(f"{what} has trailing dimension {arr.shape[-1]}, expected {dim}")


def step_plant(model: PlantModel, x, u, w) -> np.ndarray:
    """Return f(x) + B u + w."""
    x, u, w = (np.asarray(a, dtype=float) for a in (x, u, w))
    _check_last(x, model.state_dim, "x")
    _check_last(u, model.input_dim, "u")
    _check_last(w, model.state_dim, "w")
    return model.f(x) + u @ model.B.T + w


def linearize(model: PlantModel, x0) -> np.ndarray:
    """Jacobian A = df/dx evaluated at ``x0``."""
    x0 = np.asarray(x0, dtype=float)
    _check_last(x0, model.state_dim, "x0")
    if model.A is not None:
        return model.A.copy()
    return np.asarray(model.jacobian(x0), dtype=float)


@dataclass(frozen=True)
class NoiseStream:
    """Reproducible Gaussian (or ball-uniform) draws keyed by seed and stream label.

    A whole horizon is drawn at once, so the draw at step ``t`` never depends on
    how many other streams were consumed before it.
    """

    seed: int
    stream_id: str

    def _rng(self) -> np.random.Generator:
        code = STREAM_CODES.get(self.stream_id)
        if code is None:
            raise KeyError(f"unknown stream {self.stream_id!r}; valid: {sorted(STREAM_CODES)}")
        return np.random.default_rng(np.random.SeedSequence([int(self.seed) % 2**64, code]))

    def gaussian(self, horizon: int, cov: np.ndarray) -> np.ndarray:
        cov = np.atleast_2d(cov)
        z = self._rng().standard_normal((horizon, cov.shape[0]))
        # eigh tolerates singular covariances where cholesky would not
        vals, vecs = np.linalg.eigh(cov)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        return z @ root.T

    def ball(self, horizon: int, dim: int, radius: float) -> np.ndarray:
        """Uniform samples from the closed ball of the given radius."""
        rng = self._rng()
        d = rng.standard_normal((horizon, dim))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        rad = radius * rng.random(horizon) ** (1.0 / dim)
        return d * rad[:, None]

    def draw(self, t: int, cov: np.ndarray) -> np.ndarray:
        return self.gaussian(t + 1, cov)[t]


def run_seed(seed: int, index: int) -> int:
    """64-bit per-run seed derived from a campaign seed and run index."""
    return int(np.random.SeedSequence([int(seed) % 2**64, int(index)]).generate_state(1, np.uint64)[0])


@dataclass
class Trajectory:
    """Paired attack-free / attacked record for one run (t = 0..horizon).

    Residual and alarm arrays are ``None`` when no monitor was attached.  When
    the attacked loop diverges the arrays are truncated after ``last_valid``.
    """

    dt: float
    horizon: int
    seed: int
    x: np.ndarray
    x_a: np.ndarray
    s: np.ndarray
    e: np.ndarray
    y_s: np.ndarray
    y_s_a: np.ndarray
    y_p: np.ndarray
    y_p_a: np.ndarray
    u: np.ndarray
    u_a: np.ndarray
    resid: Optional[np.ndarray] = None
    resid_a: Optional[np.ndarray] = None
    stat: Optional[np.ndarray] = None
    stat_a: Optional[np.ndarray] = None
    alarms: Optional[dict] = None
    alarms_a: Optional[dict] = None
    diverged: bool = False
    last_valid: int = -1

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.x.shape[0])

    @property
    def r(self) -> np.ndarray:
        """Residual state r_t = e_t - x_t."""
        return self.e - self.x


@dataclass
class BatchTrajectory:
    """Same fields as :class:`Trajectory` with a leading run axis."""

    dt: float
    horizon: int
    seeds: np.ndarray
    x: np.ndarray
    x_a: np.ndarray
    s: np.ndarray
    e: np.ndarray
    y_s: np.ndarray
    y_s_a: np.ndarray
    y_p: np.ndarray
    y_p_a: np.ndarray
    u: np.ndarray
    u_a: np.ndarray
    v_s: np.ndarray
    w: np.ndarray
    resid: Optional[np.ndarray] = None
    resid_a: Optional[np.ndarray] = None
    stat: Optional[np.ndarray] = None
    stat_a: Optional[np.ndarray] = None
    alarms: Optional[dict] = None
    alarms_a: Optional[dict] = None
    diverged: Optional[np.ndarray] = None
    diverged_free: Optional[np.ndarray] = None
    last_valid: Optional[np.ndarray] = None

    @property
    def n_runs(self) -> int:
        return self.x.shape[0]

    def run(self, i: int) -> Trajectory:
        lv = int(self.last_valid[i])
        end = lv + 1

        def cut(a):
            return None if a is None else a[i, :end].copy()

        return Trajectory(
            dt=self.dt,
            horizon=self.horizon,
            seed=int(self.seeds[i]),
            x=cut(self.x),
            x_a=cut(self.x_a),
            s=cut(self.s),
            e=cut(self.e),
            y_s=cut(self.y_s),
            y_s_a=cut(self.y_s_a),
            y_p=cut(self.y_p),
            y_p_a=cut(self.y_p_a),
            u=cut(self.u),
            u_a=cut(self.u_a),
            resid=cut(self.resid),
            resid_a=cut(self.resid_a),
            stat=cut(self.stat),
            stat_a=cut(self.stat_a),
            alarms=None if self.alarms is None else {k: v[i, :end].copy() for k, v in self.alarms.items()},
            alarms_a=None if self.alarms_a is None else {k: v[i, :end].copy() for k, v in self.alarms_a.items()},
            diverged=bool(self.diverged[i]),
            last_valid=lv,
        )


def _draw_noise(model: PlantModel, horizon: int, seeds: Sequence[int]):
    w = np.stack([NoiseStream(s, "process").gaussian(horizon + 1, model.sigma_w) for s in seeds])
    v = np.stack([NoiseStream(s, "sensor").gaussian(horizon + 1, model.sigma_vs) for s in seeds])
    return w, v


def simulate_batch(
    model: PlantModel,
    controller,
    pmap: PerceptionMap,
    horizon: int,
    seeds: Sequence[int],
    x0=None,
    attacker=None,
    monitor=None,
) -> BatchTrajectory:
    """Run paired attack-free and attacked closed loops for every seed.

    Both loops consume the same process and sensor noise draws.  ``attacker``
    follows the protocol of :class:`stealthsim.adversary.Attacker` and
    ``monitor`` that of :class:`stealthsim.detection.ResidualMonitor`; either
    may be ``None``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    seeds = np.asarray([int(s) for s in seeds], dtype=np.uint64)
    N, T, n = len(seeds), horizon, model.state_dim
    m, ns, p = model.input_dim, model.sensor_dim, pmap.C_p.shape[0]
    if pmap.C_p.shape[1] != n:
        raise ContractViolation("perception map and plant disagree on state_dim")

    w, v = _draw_noise(model, T, seeds)
    X = np.full((N, T + 1, n), np.nan)
    Xa = np.full((N, T + 1, n), np.nan)
    S = np.zeros((N, T + 1, n))
    Ys = np.full((N, T + 1, ns), np.nan)
    Ysa = np.full((N, T + 1, ns), np.nan)
    Yp = np.full((N, T + 1, p), np.nan)
    Ypa = np.full((N, T + 1, p), np.nan)
    U = np.full((N, T + 1, m), np.nan)
    Ua = np.full((N, T + 1, m), np.nan)

    x = np.zeros((N, n)) if x0 is None else np.broadcast_to(np.asarray(x0, float), (N, n)).copy()
    xa = x.copy()
    s = np.zeros((N, n))
    if attacker is not None:
        attacker.begin(model, seeds, T)
        s = attacker.offset(0, np.zeros((N, n)), xa)
    mon_free = mon_att = None
    if monitor is not None:
        mon_free = monitor.spawn(model, pmap, N, x)
        mon_att = monitor.spawn(model, pmap, N, x)

    alive = np.ones(N, dtype=bool)
    alive_free = np.ones(N, dtype=bool)
    last_valid = np.full(N, T)
    u_prev = u_prev_a = None

    for t in range(T + 1):
        # attack-free channel
        yp = perceive(pmap, x)
        ys = x @ model.C_s.T + v[:, t]
        u = controller.policy(yp, ys)
        # attacked channel: everything the controller/detector sees is a function of e
        e = xa - s
        ypa = perceive(pmap, e)
        ysa = e @ model.C_s.T + v[:, t]
        ua = controller.policy(ypa, ysa)

        X[:, t], Xa[:, t], S[:, t] = x, xa, s
        Yp[:, t], Ys[:, t], U[:, t] = yp, ys, u
        Ypa[:, t], Ysa[:, t], Ua[:, t] = ypa, ysa, ua

        if monitor is not None:
            mon_free.observe(t, np.concatenate([yp, ys], axis=1), u_prev)
            mon_att.observe(t, np.concatenate([ypa, ysa], axis=1), u_prev_a)
        u_prev, u_prev_a = u, ua
        if t == T:
            break

        x_next = model.f(x) + u @ model.B.T + w[:, t]
        xa_next = model.f(xa) + ua @ model.B.T + w[:, t]
        if attacker is not None:
            s = attacker.offset(t + 1, s, xa)
        x, xa = x_next, xa_next

        bad = ~np.isfinite(xa).all(axis=1) | (np.linalg.norm(np.nan_to_num(xa, nan=np.inf), axis=1) > DIVERGENCE_NORM)
        newly = bad & alive
        if newly.any():
            last_valid[newly] = t
            alive &= ~bad
            xa[newly] = np.nan
            log.info("attacked loop diverged at step %d for %d run(s)", t + 1, int(newly.sum()))
        bad_free = ~np.isfinite(x).all(axis=1) | (np.linalg.norm(np.nan_to_num(x, nan=np.inf), axis=1) > DIVERGENCE_NORM)
        newly = bad_free & alive_free
        if newly.any():
            alive_free &= ~bad_free
            last_valid[newly] = np.minimum(last_valid[newly], t)
            x[newly] = np.nan
            log.warning("attack-free loop diverged at step %d", t + 1)
        if not (alive.any() or alive_free.any()):
            break

    bt = BatchTrajectory(
        dt=model.dt,
        horizon=T,
        seeds=seeds,
        x=X,
        x_a=Xa,
        s=S,
        e=Xa - S,
        y_s=Ys,
        y_s_a=Ysa,
        y_p=Yp,
        y_p_a=Ypa,
        u=U,
        u_a=Ua,
        v_s=v,
        w=w,
        diverged=~alive,
        diverged_free=~alive_free,
        last_valid=last_valid,
    )
    if monitor is not None:
        bt.resid, bt.stat, bt.alarms = mon_free.result()
        bt.resid_a, bt.stat_a, bt.alarms_a = mon_att.result()
    return bt


def simulate_closed_loop(
    model: PlantModel,
    controller,
    pmap: PerceptionMap,
    attacker=None,
    detector=None,
    horizon: int = 500,
    seed: int = 0,
    x0=None,
) -> Trajectory:
    """Single-run wrapper around :func:`simulate_batch`."""
    bt = simulate_batch(model, controller, pmap, horizon, [seed], x0=x0, attacker=attacker, monitor=detector)
    return bt.run(0)
