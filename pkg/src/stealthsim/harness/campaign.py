"""Paired Monte Carlo campaigns and case-study drivers."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from ..adversary import AttackConfig, Attacker
from ..analysis import (
    InformationBounds,
    check_lti_endtoend,
    check_lti_linear_feedback,
    check_strategy1,
    check_strategy1_exact,
    check_strategy2,
    divergence_time,
    max_admissible_bzeta,
    strategy1_admissible,
)
from ..control import PENDULUM_NORM_B, PENDULUM_PRESET, VEHICLE_NORM_B, VEHICLE_PRESET
from ..detection import DetectorConfig, ResidualMonitor, alarm_statistics, calibrate_threshold
from ..dynamics import BatchTrajectory, run_seed, simulate_batch
from ..plants import CaseStudy, case_study
from .config import ExperimentConfig, merge_overrides, preset_config

log = logging.getLogger(__name__)

CALIBRATION_OFFSET = 1_000_000
B_X, B_V = 0.2, 0.05
VEHICLE_L3 = 0.0532
LATERAL = (1, 2)


class DivergenceWithoutAttack(RuntimeError):
    """An attack-free run left the divergence guard (maps to CLI exit code 3)."""


@dataclass
class CampaignResult:
    config: ExperimentConfig
    runs: List[dict]
    alarm_stats: dict
    detectors: List[DetectorConfig]
    stealth: Optional[object] = None
    attackability: Optional[object] = None
    batch: Optional[BatchTrajectory] = field(default=None, repr=False)
    manifest: List[str] = field(default_factory=list)

    @property
    def n_runs(self) -> int:
        return len(self.runs)


def build_case(cfg: ExperimentConfig) -> CaseStudy:
    kw = cfg.plant.kwargs()
    kw.update(gamma=cfg.perception.gamma, safe_radius=cfg.perception.safe_radius)
    return case_study(cfg.case, seed=cfg.seed, **kw)


def build_attacker(cfg: ExperimentConfig, cs: CaseStudy) -> Optional[Attacker]:
    if cfg.attack is None:
        return None
    a = cfg.attack
    s0 = cs.s0 if a.s0 is None else np.asarray(a.s0, dtype=float)
    b_zeta = a.b_zeta
    if a.strategy == "estimate_based" and b_zeta is None:
        b_zeta = 0.0
    return Attacker(AttackConfig(a.strategy, s0, b_zeta=b_zeta, start_step=a.start_step))


def calibrate(cfg: ExperimentConfig, cs: CaseStudy) -> List[DetectorConfig]:
    if cfg.detectors is None or not cfg.detectors.kinds:
        return []
    d = cfg.detectors
    seeds = [run_seed(cfg.seed, CALIBRATION_OFFSET + i) for i in range(d.calibration_runs)]
    bt = simulate_batch(cs.model, cs.controller, cs.pmap, cfg.horizon, seeds, monitor=ResidualMonitor())
    out = []
    for kind in d.kinds:
        out.append(
            calibrate_threshold(
                kind,
                cs.model,
                cs.controller,
                cs.pmap,
                d.target_fa,
                d.calibration_runs,
                cfg.horizon,
                cfg.seed,
                cusum_drift=d.cusum_drift,
                stats=bt.stat,
            )
        )
    return out


def _simulate_chunk(cfg_dict: dict, indices: List[int], detectors: List[DetectorConfig]) -> BatchTrajectory:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    cs = build_case(cfg)
    seeds = [run_seed(cfg.seed, i) for i in indices]
    monitor = ResidualMonitor(detectors=detectors) if detectors else None
    return simulate_batch(cs.model, cs.controller, cs.pmap, cfg.horizon, seeds, attacker=build_attacker(cfg, cs), monitor=monitor)


def _concat(parts: List[BatchTrajectory]) -> BatchTrajectory:
    if len(parts) == 1:
        return parts[0]
    first = parts[0]
    kw = {}
    for name in first.__dataclass_fields__:
        vals = [getattr(p, name) for p in parts]
        if name in ("dt", "horizon"):
            kw[name] = vals[0]
        elif vals[0] is None:
            kw[name] = None
        elif isinstance(vals[0], dict):
            kw[name] = {k: np.concatenate([v[k] for v in vals]) for k in vals[0]}
        else:
            kw[name] = np.concatenate(vals)
    return BatchTrajectory(**kw)


def _run_summaries(bt: BatchTrajectory, cs: CaseStudy, alpha: float) -> List[dict]:
    idx = cs.track_index
    out = []
    for i in range(bt.n_runs):
        track = np.abs(bt.x_a[i, :, idx])
        hit = np.nonzero(np.nan_to_num(track, nan=np.inf) >= alpha)[0]
        out.append(
            dict(
                run=i,
                seed=int(bt.seeds[i]),
                max_abs_free=float(np.nanmax(np.abs(bt.x[i, :, idx]))),
                max_abs_attacked=float(np.nanmax(track)),
                final_attacked=float(bt.x_a[i, int(bt.last_valid[i]), idx]),
                exit_step=int(hit[0]) if hit.size else -1,
                diverged=bool(bt.diverged[i]),
                mean_resid_free=float(np.nanmean(bt.resid[i])) if bt.resid is not None else float("nan"),
                mean_resid_attacked=float(np.nanmean(bt.resid_a[i])) if bt.resid_a is not None else float("nan"),
            )
        )
    return out


def run_montecarlo(config: ExperimentConfig, n_runs: Optional[int] = None, keep_batch: bool = True) -> CampaignResult:
    """Paired attacked / attack-free ensemble under common random numbers.

    Detector thresholds are calibrated on a disjoint set of attack-free seeds.
    With ``workers > 1`` runs are split into chunks simulated in separate
    processes; results are reassembled in run-index order.
    """
    cfg = config if n_runs is None else config.replace(n_runs=n_runs)
    cs = build_case(cfg)
    detectors = calibrate(cfg, cs)
    idx = list(range(cfg.n_runs))
    cfg_dict = cfg.to_dict()
    if cfg.workers > 1 and cfg.n_runs > 1:
        chunks = [c.tolist() for c in np.array_split(np.array(idx), min(cfg.workers, cfg.n_runs))]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(_simulate_chunk, [cfg_dict] * len(chunks), chunks, [detectors] * len(chunks)))
    else:
        parts = [_simulate_chunk(cfg_dict, idx, detectors)]
    bt = _concat(parts)
    if np.any(bt.diverged_free):
        raise DivergenceWithoutAttack(f"{int(bt.diverged_free.sum())} attack-free run(s) diverged")
    stats = {}
    if bt.alarms:
        for k in bt.alarms:
            stats[k] = alarm_statistics(bt.alarms_a[k], bt.alarms[k])
    alpha = cs.alpha
    return CampaignResult(
        config=cfg,
        runs=_run_summaries(bt, cs, alpha),
        alarm_stats=stats,
        detectors=detectors,
        batch=bt if keep_batch else None,
    )


def condition_reports(cfg: ExperimentConfig, cs: CaseStudy):
    """Condition-checker reports with the quoted constants for each case study."""
    info = InformationBounds.from_model(cs.model)
    s0 = cs.s0 if (cfg.attack is None or cfg.attack.s0 is None) else np.asarray(cfg.attack.s0, float)
    s0_norm = float(np.linalg.norm(s0))
    if cfg.case == "pendulum":
        cert, nB = PENDULUM_PRESET, PENDULUM_NORM_B
        alpha = cs.alpha
        T = divergence_time(cs.model.f, s0, alpha + B_X + s0_norm) if s0_norm > 0 else None
        b_zeta = 0.0 if (cfg.attack is None or cfg.attack.b_zeta is None) else cfg.attack.b_zeta
        phi = strategy1_admissible(cert, B_X, B_V, b_zeta, alpha, nB)
        if cfg.attack is not None and cfg.attack.strategy == "open_loop":
            att = check_strategy2(cert, B_X, B_V, alpha, None, nB)
        else:
            att = check_strategy1(cert, B_X, B_V, b_zeta, alpha, phi if phi is not None else max(s0_norm, 1e-3), nB, s0_norm)
        att.quantities["max_admissible_b_zeta"] = max_admissible_bzeta(cert, B_X, B_V, alpha, nB)
        att.T_alpha = T
        stealth = check_strategy1_exact(cert, B_X, B_V, s0_norm, alpha, T, nB, info)
        return stealth, att
    cert, nB = VEHICLE_PRESET, VEHICLE_NORM_B
    alpha = cs.alpha
    A = cs.model.jacobian(np.zeros(cs.model.state_dim))
    T = divergence_time(lambda s: A @ s, s0, alpha + B_X + s0_norm) if s0_norm > 0 else None
    stealth = check_lti_endtoend(cert, B_X, B_V, s0_norm, alpha, T, nB, info, L3=VEHICLE_L3)
    # longitudinal states are neither actuated nor observed by the lane keeper,
    # so the closed loop is only stable on the lateral (y, psi) block
    lat = list(LATERAL)
    K = np.hstack([cs.controller.K_p, cs.controller.K_s])
    C = np.vstack([cs.pmap.C_p, cs.model.C_s])[:, lat]
    att = None
    if np.linalg.norm(s0[lat]) > 0:
        att = check_lti_linear_feedback(
            A[np.ix_(lat, lat)], cs.model.B[lat], K, C, cs.pmap.gamma, s0[lat], alpha, cs.pmap.safe_radius, info
        )
    return stealth, att


def run_casestudy(name: str, overrides: Optional[dict] = None, seed: int = 0, keep_batch: bool = True) -> CampaignResult:
    """Preset campaign plus condition-checker reports for ``pendulum`` or ``vehicle``."""
    cfg = merge_overrides(preset_config(name, seed=seed), overrides)
    res = run_montecarlo(cfg, keep_batch=keep_batch)
    res.stealth, res.attackability = condition_reports(cfg, build_case(cfg))
    return res
