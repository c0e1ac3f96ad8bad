"""EKF residual generator with chi-squared and CUSUM detectors, calibration and alarm statistics.

All filter routines are batched: ``x_hat`` may be ``(n,)`` or ``(N, n)`` and
``P`` correspondingly ``(n, n)`` or ``(N, n, n)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import block_diag

from .control import ConfigError
from .dynamics import PlantModel
from .sensing import PerceptionMap

log = logging.getLogger(__name__)

JITTER = 1e-9
KINDS = ("chi2", "cusum")


def measurement_model(model: PlantModel, pmap: PerceptionMap, R_p: Optional[np.ndarray] = None):
    """Stacked C = [C_p; C_s] and R = blkdiag(R_p, sigma_vs).

    The deterministic perception error is treated as noise with covariance
    (gamma^2 / p) I unless ``R_p`` is given.
    """
    p = pmap.output_dim
    if R_p is None:
        R_p = (pmap.gamma**2 / p) * np.eye(p)
    C = np.vstack([pmap.C_p, model.C_s])
    R = block_diag(np.atleast_2d(R_p), model.sigma_vs)
    return C, R


@dataclass
class EkfState:
    x_hat: np.ndarray
    P: np.ndarray
    C: np.ndarray
    R: np.ndarray

    @classmethod
    def initial(cls, model: PlantModel, pmap: PerceptionMap, n_runs: Optional[int] = None, x0=None, P0=None, R_p=None):
        n = model.state_dim
        C, R = measurement_model(model, pmap, R_p)
        if P0 is None:
            P0 = 10.0 * model.sigma_w + JITTER * np.eye(n)
        x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        if n_runs is None:
            return cls(x_hat=x0.copy(), P=np.array(P0, dtype=float), C=C, R=R)
        return cls(
            x_hat=np.broadcast_to(x0, (n_runs, n)).copy(),
            P=np.broadcast_to(P0, (n_runs, n, n)).copy(),
            C=C,
            R=R,
        )


def _sym(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def ekf_predict(ekf: EkfState, model: PlantModel, u) -> EkfState:
    F = model.jacobian(ekf.x_hat)
    x = model.f(ekf.x_hat) + np.asarray(u, dtype=float) @ model.B.T
    P = F @ ekf.P @ np.swapaxes(F, -1, -2) + model.sigma_w
    return EkfState(x_hat=x, P=_sym(P), C=ekf.C, R=ekf.R)


def innovation(ekf: EkfState, y):
    """Residual y - C x_hat and its covariance S = C P C^T + R (jittered if singular)."""
    C = ekf.C
    r = np.asarray(y, dtype=float) - ekf.x_hat @ C.T
    S = _sym(C @ ekf.P @ C.T + ekf.R)
    d = S.shape[-1]
    cond = np.linalg.cond(S)
    bad = ~np.isfinite(cond) | (cond > 1e14)
    if np.any(bad):
        log.info("innovation covariance near singular; adding %.0e jitter", JITTER)
        S = S + JITTER * np.eye(d)
    return r, S


def ekf_update(ekf: EkfState, y):
    """Measurement update; returns (state, residual, S)."""
    r, S = innovation(ekf, y)
    PCt = ekf.P @ ekf.C.T
    K = np.swapaxes(np.linalg.solve(S, np.swapaxes(PCt, -1, -2)), -1, -2)
    x = ekf.x_hat + np.einsum("...ij,...j->...i", K, r)
    n = ekf.P.shape[-1]
    I_KC = np.eye(n) - K @ ekf.C
    # Joseph form keeps P symmetric positive definite
    P = I_KC @ ekf.P @ np.swapaxes(I_KC, -1, -2) + K @ ekf.R @ np.swapaxes(K, -1, -2)
    P = _sym(P) + JITTER * np.eye(n)
    return EkfState(x_hat=x, P=P, C=ekf.C, R=ekf.R), r, S


def ekf_step(ekf: EkfState, model: PlantModel, u, y):
    """Predict with the previous input ``u`` (skipped when ``None``), then update with ``y``."""
    if u is not None:
        ekf = ekf_predict(ekf, model, u)
    return ekf_update(ekf, y)


def chi2_statistic(residual, S) -> np.ndarray:
    residual = np.asarray(residual, dtype=float)
    z = np.linalg.solve(S, residual[..., None])[..., 0]
    return np.einsum("...i,...i->...", residual, z)


@dataclass(frozen=True)
class DetectorConfig:
    kind: str
    threshold: float
    cusum_drift: float = 0.0
    window: int = 1
    achieved_rate: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown detector kind {self.kind!r}; valid: {list(KINDS)}")
        if not self.threshold > 0:
            raise ConfigError("threshold must be positive")


def chi2_decide(residual, S, cfg: DetectorConfig):
    if cfg.kind != "chi2":
        raise ConfigError("chi2_decide needs a chi2 config")
    return chi2_statistic(residual, S) > cfg.threshold


def cusum_update(state, g, cfg: DetectorConfig):
    """CUSUM recursion on a precomputed statistic g; resets to zero on alarm."""
    new = np.maximum(0.0, np.asarray(state, dtype=float) + np.asarray(g, dtype=float) - cfg.cusum_drift)
    alarm = new > cfg.threshold
    return np.where(alarm, 0.0, new), alarm


def cusum_decide(state, residual, S, cfg: DetectorConfig):
    """Return (new_state, alarm) for g = r^T S^-1 r."""
    if cfg.kind != "cusum":
        raise ConfigError("cusum_decide needs a cusum config")
    return cusum_update(state, chi2_statistic(residual, S), cfg)


def cusum_alarms(g: np.ndarray, cfg: DetectorConfig) -> np.ndarray:
    """Run CUSUM along the last axis of ``g``; NaNs (truncated runs) never alarm."""
    g = np.asarray(g, dtype=float)
    state = np.zeros(g.shape[:-1])
    out = np.zeros(g.shape, dtype=bool)
    for t in range(g.shape[-1]):
        gt = np.nan_to_num(g[..., t], nan=0.0)
        state, out[..., t] = cusum_update(state, gt, cfg)
    return out


class _RunMonitor:
    def __init__(self, parent: "ResidualMonitor", model, pmap, n_runs):
        self.parent = parent
        self.model = model
        self.ekf = EkfState.initial(model, pmap, n_runs, x0=parent.x0, P0=parent.P0, R_p=parent.R_p)
        self.norms = []
        self.stats = []

    def observe(self, t, y, u_prev):
        ok = np.isfinite(y).all(axis=1)
        y = np.where(ok[:, None], y, 0.0)
        new, r, S = ekf_step(self.ekf, self.model, u_prev if t > 0 else None, y)
        g = chi2_statistic(r, S)
        self.ekf = new
        self.norms.append(np.where(ok, np.linalg.norm(r, axis=1), np.nan))
        self.stats.append(np.where(ok, g, np.nan))

    def result(self):
        resid = np.stack(self.norms, axis=1)
        stat = np.stack(self.stats, axis=1)
        alarms = {}
        for cfg in self.parent.detectors:
            if cfg.kind == "chi2":
                alarms["chi2"] = np.nan_to_num(stat, nan=0.0) > cfg.threshold
            else:
                alarms["cusum"] = cusum_alarms(stat, cfg)
        return resid, stat, alarms


@dataclass
class ResidualMonitor:
    """EKF + detectors attached to a simulation.

    Records the residual norm and normalised statistic r^T S^-1 r per step,
    plus per-step alarms for each configured detector.
    """

    detectors: Sequence[DetectorConfig] = field(default_factory=tuple)
    x0: Optional[np.ndarray] = None
    P0: Optional[np.ndarray] = None
    R_p: Optional[np.ndarray] = None

    def spawn(self, model, pmap, n_runs, x_init=None):
        return _RunMonitor(self, model, pmap, n_runs)


def _stat_paths(model, controller, pmap, n_runs, horizon, seed, R_p=None, x0=None):
    from .dynamics import run_seed, simulate_batch

    seeds = [run_seed(seed, i) for i in range(n_runs)]
    bt = simulate_batch(model, controller, pmap, horizon, seeds, x0=x0, monitor=ResidualMonitor(R_p=R_p))
    return bt.stat


def calibrate_threshold(
    detector_kind: str,
    model: PlantModel,
    controller,
    pmap: PerceptionMap,
    target_fa: float,
    n_runs: int,
    horizon: int,
    seed: int,
    cusum_drift: Optional[float] = None,
    stats: Optional[np.ndarray] = None,
    R_p=None,
) -> DetectorConfig:
    """Empirical threshold giving a per-step attack-free alarm rate of ``target_fa``.

    chi2: the (1 - target) quantile of the pooled statistic.  CUSUM: drift
    defaults to the empirical mean of the statistic, and the threshold is
    bisected until the per-step alarm rate matches the target.  Precomputed
    attack-free ``stats`` (runs x steps) may be passed to skip simulation.
    """
    if not 0 < target_fa < 1:
        raise ConfigError("target_fa must lie in (0, 1)")
    if detector_kind not in KINDS:
        raise ConfigError(f"unknown detector kind {detector_kind!r}")
    if n_runs * horizon * target_fa < 20:
        raise ConfigError("n_runs * horizon * target_fa < 20: too few samples to resolve the quantile")
    g = _stat_paths(model, controller, pmap, n_runs, horizon, seed, R_p=R_p) if stats is None else np.asarray(stats)
    pooled = g[np.isfinite(g)]
    if detector_kind == "chi2":
        h = float(np.quantile(pooled, 1.0 - target_fa))
        return DetectorConfig("chi2", h, achieved_rate=float(np.mean(pooled > h)))

    nu = float(np.mean(pooled)) if cusum_drift is None else float(cusum_drift)

    def rate_at(h):
        return float(np.mean(cusum_alarms(g, DetectorConfig("cusum", h, nu))))

    lo, hi = 1e-9, max(float(np.max(pooled)), 1.0)
    while rate_at(hi) > target_fa:
        hi *= 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if rate_at(mid) > target_fa:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-9 * hi:
            break
    return DetectorConfig("cusum", hi, nu, achieved_rate=rate_at(hi))


@dataclass
class AlarmStats:
    p_fa: float
    p_td: float
    p_e: float
    per_step_fa: np.ndarray
    per_step_td: np.ndarray
    n_attacked: int
    n_free: int

    @property
    def per_step_alarm_rate(self) -> np.ndarray:
        return self.per_step_td

    def stderr(self) -> float:
        """Binomial standard error of the p_e estimate."""
        v = self.p_td * (1 - self.p_td) / self.n_attacked + self.p_fa * (1 - self.p_fa) / self.n_free
        return float(np.sqrt(v))


def alarm_statistics(attacked_runs, attack_free_runs, window: Optional[slice] = None) -> AlarmStats:
    """Detection statistics from boolean alarm arrays (runs x steps).

    A run counts as detected (or as a false alarm) if any step in ``window``
    alarms; per-step averages are over runs.
    """
    a = np.atleast_2d(np.asarray(attacked_runs, dtype=bool))
    f = np.atleast_2d(np.asarray(attack_free_runs, dtype=bool))
    if a.size == 0 or f.size == 0:
        raise ValueError("need at least one attacked and one attack-free run")
    if window is not None:
        a, f = a[:, window], f[:, window]
    p_td = float(np.mean(a.any(axis=1)))
    p_fa = float(np.mean(f.any(axis=1)))
    return AlarmStats(
        p_fa=p_fa,
        p_td=p_td,
        p_e=1.0 - p_td + p_fa,
        per_step_fa=f.mean(axis=0),
        per_step_td=a.mean(axis=0),
        n_attacked=a.shape[0],
        n_free=f.shape[0],
    )
