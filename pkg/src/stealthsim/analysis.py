"""Stealthiness mathematics and attackability condition checkers.

KL / total-variation / epsilon conversions, divergence times, the success
probability delta(T, b_x, b_v), the closed-form sufficient conditions for the
estimate-based, open-loop and LTI attack recurrences, and a sampling test for
membership of a drift map in U_rho.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .control import ConfigError, LyapunovCertificate, sample_ball
from .dynamics import PlantModel, run_seed, simulate_batch

# ---------------------------------------------------------------- KL / TV / eps


def gaussian_kl_same_cov(mu_q, mu_p, sigma) -> float:
    """KL(N(mu_q, S) || N(mu_p, S)) = 0.5 d^T S^-1 d with d = mu_q - mu_p."""
    mu_q = np.atleast_1d(np.asarray(mu_q, dtype=float))
    mu_p = np.atleast_1d(np.asarray(mu_p, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        L = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("sigma must be positive definite") from exc
    z = np.linalg.solve(L, mu_q - mu_p)
    return 0.5 * float(z @ z)


def epsilon_from_kl(kl_bound: float) -> float:
    """sqrt(1 - exp(-KL)): the total-variation bound implied by a KL budget."""
    if kl_bound < 0:
        raise ValueError("kl_bound must be nonnegative")
    return math.sqrt(-math.expm1(-kl_bound))


def kl_budget_from_epsilon(epsilon: float) -> float:
    """log(1 / (1 - eps^2)), the inverse of :func:`epsilon_from_kl`."""
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    return -math.log1p(-epsilon * epsilon)


def epsilon_gap(kl_bound: float) -> float:
    """1 - epsilon_from_kl(kl), computed without cancellation."""
    eps = epsilon_from_kl(kl_bound)
    return math.exp(-kl_bound) / (1.0 + eps)


# ---------------------------------------------------------------- reports


@dataclass(frozen=True)
class Condition:
    name: str
    lhs: float
    rhs: float
    passed: bool


def _cond(name, lhs, rhs, strict=True) -> Condition:
    lhs, rhs = float(lhs), float(rhs)
    ok = lhs < rhs if strict else lhs <= rhs
    return Condition(name, lhs, rhs, bool(ok and np.isfinite(lhs)))


@dataclass
class AttackabilityReport:
    conditions: list
    b: float
    alpha: float
    T_alpha: Optional[int] = None
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    kl_bound: Optional[float] = None
    quantities: dict = field(default_factory=dict)

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> Condition:
        return next(c for c in self.conditions if c.name == name)


@dataclass
class StealthinessReport:
    kl_bound: float
    epsilon: float
    conditions: list = field(default_factory=list)
    kl_empirical: Optional[float] = None
    quantities: dict = field(default_factory=dict)

    @property
    def strict(self) -> bool:
        return self.kl_bound == 0.0

    @property
    def epsilon_gap(self) -> float:
        return epsilon_gap(self.kl_bound)

    @property
    def verdict(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> Condition:
        return next(c for c in self.conditions if c.name == name)


@dataclass(frozen=True)
class InformationBounds:
    """lam_w = lmax(Sw^-1), lam_joint = lmax(C_s^T Sv^-1 C_s + Sw^-1)."""

    lam_w: float
    lam_joint: float

    @classmethod
    def from_covariances(cls, sigma_w, sigma_vs, C_s) -> "InformationBounds":
        Wi = np.linalg.inv(np.atleast_2d(sigma_w))
        Vi = np.linalg.inv(np.atleast_2d(sigma_vs))
        C_s = np.atleast_2d(C_s)
        return cls(
            lam_w=float(np.max(np.linalg.eigvalsh(Wi))),
            lam_joint=float(np.max(np.linalg.eigvalsh(C_s.T @ Vi @ C_s + Wi))),
        )

    @classmethod
    def from_model(cls, model: PlantModel) -> "InformationBounds":
        return cls.from_covariances(model.sigma_w, model.sigma_vs, model.C_s)


# ---------------------------------------------------------------- divergence / delta


def divergence_time(advance: Callable, s0, alpha: float, max_steps: int = 100_000) -> Optional[int]:
    """First t with |s_t| >= alpha along s_{t+1} = advance(s_t); ``None`` if not reached."""
    s = np.asarray(s0, dtype=float)
    if not np.any(s):
        raise ValueError("s0 must be nonzero")
    if alpha <= np.linalg.norm(s):
        raise ValueError("alpha must exceed |s0|")
    for t in range(1, max_steps + 1):
        s = np.asarray(advance(s), dtype=float)
        nrm = np.linalg.norm(s)
        if not np.isfinite(nrm) or nrm >= alpha:
            return t
    return None


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    ci_low: float
    ci_high: float
    successes: int
    n_runs: int


def estimate_delta(
    model: PlantModel,
    controller,
    pmap,
    T: int,
    b_x: float,
    b_v: float,
    n_runs: int,
    seed: int,
    x0=None,
    state_index: Optional[Sequence[int]] = None,
) -> DeltaEstimate:
    """Fraction of attack-free runs with sup|x_t| <= b_x and sup|v_t| <= b_v over t = 0..T.

    ``state_index`` restricts the state norm to a subset of coordinates.
    The interval is the Wilson 95% score interval.
    """
    if n_runs < 1:
        raise ConfigError("n_runs must be >= 1")
    seeds = [run_seed(seed, i) for i in range(n_runs)]
    bt = simulate_batch(model, controller, pmap, T, seeds, x0=x0)
    x = bt.x if state_index is None else bt.x[..., list(state_index)]
    xs = np.nan_to_num(np.linalg.norm(x, axis=-1), nan=np.inf).max(axis=1)
    vs = np.linalg.norm(bt.v_s[:, : T + 1], axis=-1).max(axis=1)
    k = int(np.sum((xs <= b_x) & (vs <= b_v)))
    ci = binomtest(k, n_runs).proportion_ci(confidence_level=0.95, method="wilson")
    return DeltaEstimate(k / n_runs, float(ci.low), float(ci.high), k, n_runs)


# ---------------------------------------------------------------- condition checkers


def _safe_div(num, den):
    return num / den if den > 0 else math.inf


def check_strategy1(
    cert: LyapunovCertificate,
    b_x: float,
    b_v: float,
    b_zeta: float,
    alpha: float,
    phi: float,
    norm_B: float,
    s0_norm: Optional[float] = None,
) -> AttackabilityReport:
    """Sufficient conditions for the estimate-based recurrence with |zeta| <= b_zeta."""
    c = cert
    L1 = c.Lp_f * (b_x + 2 * b_zeta + phi)
    L2 = min(2 * c.L_f, c.Lp_f * (alpha + b_x + b_zeta))
    L3 = c.Lp_pi * (b_x + phi + b_v)
    gap = c.c3 - (L1 + L3 * norm_B) * c.c4
    rhs_B = gap / c.c4 * math.sqrt(c.c1 / c.c2) * c.theta * c.d
    b = _safe_div(c.c4, gap) * math.sqrt(c.c2 / c.c1) * L2 * b_zeta / c.theta if L2 * b_zeta > 0 else (0.0 if gap > 0 else math.inf)
    conds = [
        _cond("L1+L3|B| < c3/c4", L1 + L3 * norm_B, c.c3 / c.c4),
        _cond("L2*b_zeta < gap/c4*sqrt(c1/c2)*theta*d", L2 * b_zeta, rhs_B) if gap > 0 else Condition(
            "L2*b_zeta < gap/c4*sqrt(c1/c2)*theta*d", L2 * b_zeta, rhs_B, False
        ),
        _cond("b < phi", b, phi),
    ]
    if s0_norm is not None:
        conds.append(_cond("|s0| <= phi", s0_norm, phi, strict=False))
    rho = 2 * c.L_f * (b_x + b + b_zeta)
    beta = (1 - c.theta) * gap / (2 * c.c2)
    return AttackabilityReport(
        conditions=conds,
        b=b,
        alpha=alpha,
        quantities=dict(L1=L1, L2=L2, L3=L3, gap=gap, rho=rho, beta=beta, phi=phi, b_zeta=b_zeta),
    )


def _phi_grid(cert, b_x, b_v, b_zeta, norm_B, n=4000):
    """Values of phi for which L1 + L3|B| < c3/c4 can hold (empty if none)."""
    slope = cert.Lp_f + cert.Lp_pi * norm_B
    base = cert.Lp_f * (b_x + 2 * b_zeta) + cert.Lp_pi * (b_x + b_v) * norm_B
    room = cert.c3 / cert.c4 - base
    if room <= 0:
        return np.empty(0)
    hi = room / slope if slope > 0 else max(cert.d, 1.0)
    return np.linspace(hi / n, hi * (1 - 1e-9), n)


def strategy1_admissible(cert, b_x, b_v, b_zeta, alpha, norm_B) -> Optional[float]:
    """A phi for which :func:`check_strategy1` passes, or ``None``."""
    for phi in _phi_grid(cert, b_x, b_v, b_zeta, norm_B):
        if check_strategy1(cert, b_x, b_v, b_zeta, alpha, phi, norm_B).verdict:
            return float(phi)
    return None


def max_admissible_bzeta(
    cert: LyapunovCertificate,
    b_x: float,
    b_v: float,
    alpha: float,
    norm_B: float,
    upper: float = 1.0,
    tol: float = 1e-6,
) -> Optional[float]:
    """Largest b_zeta for which some phi > 0 satisfies every strategy-I condition.

    Returns ``None`` when even b_zeta = 0 is infeasible.
    """
    if strategy1_admissible(cert, b_x, b_v, 0.0, alpha, norm_B) is None:
        return None
    lo, hi = 0.0, upper
    if strategy1_admissible(cert, b_x, b_v, hi, alpha, norm_B) is not None:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if strategy1_admissible(cert, b_x, b_v, mid, alpha, norm_B) is not None:
            lo = mid
        else:
            hi = mid
    return lo


def _beta(cert, gap):
    return (1 - cert.theta) * gap / (2 * cert.c2)


def _geometric_horizon(cert, beta):
    if beta <= 0:
        return math.inf
    q = math.exp(-beta)
    return math.sqrt(cert.c2 / cert.c1) * q / (1 - q)


def check_strategy1_exact(
    cert: LyapunovCertificate,
    b_x: float,
    b_v: float,
    s0_norm: float,
    alpha: float,
    T_alpha: Optional[int],
    norm_B: float,
    info: InformationBounds,
) -> StealthinessReport:
    """KL budget for the estimate-based attack with perfect state knowledge (b_zeta = 0)."""
    c = cert
    L1 = c.Lp_f * b_x
    L3 = c.Lp_pi * (b_x + b_v)
    gap = c.c3 - c.c4 * (L1 + L3 * norm_B)
    den = c.c4 * (c.Lp_f + norm_B * c.Lp_pi)
    s0_max = gap / den if den > 0 else math.inf
    conds = [_cond("L1+L3|B| < c3/c4", L1 + L3 * norm_B, c.c3 / c.c4), _cond("|s0| <= s0_max", s0_norm, s0_max, strict=False)]
    beta = _beta(c, gap)
    horizon = min(math.inf if T_alpha is None else T_alpha, _geometric_horizon(c, beta))
    if s0_norm == 0:
        kl = 0.0
    else:
        kl = (info.lam_w + info.lam_joint * horizon) * s0_norm**2
    return StealthinessReport(
        kl_bound=kl,
        epsilon=epsilon_from_kl(kl) if np.isfinite(kl) else 1.0,
        conditions=conds,
        quantities=dict(L1=L1, L3=L3, gap=gap, beta=beta, s0_max=s0_max, horizon=horizon, T_alpha=T_alpha),
    )


def check_strategy1_expstable(
    cert: LyapunovCertificate,
    b_x: float,
    b_v: float,
    b_zeta: float,
    alpha: float,
    s0,
    T_alpha: int,
    info: InformationBounds,
) -> AttackabilityReport:
    """Bound for an exponentially stable closed loop using plain Lipschitz constants L_f, L_Pi."""
    c = cert
    b = (c.c4 / c.c3) * math.sqrt(c.c2 / c.c1) * (c.L_f * (2 * b_x + b_zeta) + 2 * c.L_pi * (b_x + b_v)) / c.theta
    kl = info.lam_joint * b * (T_alpha + 1)
    rho = 2 * c.L_f * (b_x + b + b_zeta)
    s0_norm = float(np.linalg.norm(np.atleast_1d(s0)))
    conds = [_cond("b finite", b, math.inf), _cond("|s0| < alpha", s0_norm, alpha)]
    return AttackabilityReport(
        conditions=conds,
        b=b,
        alpha=alpha,
        T_alpha=T_alpha,
        epsilon=epsilon_from_kl(kl),
        kl_bound=kl,
        quantities=dict(rho=rho, b_zeta=b_zeta, s0_norm=s0_norm),
    )


def check_strategy2(
    cert: LyapunovCertificate,
    b_x: float,
    b_v: float,
    alpha: float,
    phi: Optional[float],
    norm_B: float,
    in_U0: bool = True,
) -> AttackabilityReport:
    """Sufficient conditions for the open-loop recurrence s+ = f(s).

    With ``phi=None`` a line search picks the phi that satisfies the most
    conditions (ties broken by the smallest worst violation).
    """
    if phi is None:
        phi = _best_phi_strategy2(cert, b_x, b_v, alpha, norm_B, in_U0)
    c = cert
    L2 = c.Lp_f * (alpha + b_x)
    L1 = c.Lp_f * (alpha + phi)
    L3 = c.Lp_pi * (b_x + phi + b_v)
    gap = c.c3 - (L1 + L3 * norm_B) * c.c4
    rhs_B = gap / c.c4 * math.sqrt(c.c1 / c.c2) * c.theta * c.d
    if L2 * b_x > 0:
        b = _safe_div(c.c4, gap) * math.sqrt(c.c2 / c.c1) * L2 * b_x / c.theta
    else:
        b = 0.0 if gap > 0 else math.inf
    ratio = phi / b if b > 0 else math.inf
    name_B = "L2*b_x < gap/c4*sqrt(c1/c2)*theta*d"
    conds = [
        _cond("L1+L3|B| < c3/c4", L1 + L3 * norm_B, c.c3 / c.c4),
        _cond(name_B, L2 * b_x, rhs_B) if gap > 0 else Condition(name_B, L2 * b_x, rhs_B, False),
        Condition("phi/b > 1", ratio, 1.0, bool(ratio > 1.0)),
        Condition("f in U_0", float(in_U0), 1.0, bool(in_U0)),
    ]
    return AttackabilityReport(
        conditions=conds,
        b=b,
        alpha=alpha,
        quantities=dict(L1=L1, L2=L2, L3=L3, gap=gap, beta=_beta(c, gap), phi=phi),
    )


def _best_phi_strategy2(cert, b_x, b_v, alpha, norm_B, in_U0) -> float:
    slope = cert.Lp_f + cert.Lp_pi * norm_B
    room = cert.c3 / cert.c4 - (cert.Lp_f * alpha + cert.Lp_pi * (b_x + b_v) * norm_B)
    hi = room / slope if (room > 0 and slope > 0) else max(cert.d, 1.0)
    best, best_key = hi / 2, None
    for phi in np.linspace(hi / 2000, hi * (1 - 1e-9), 2000):
        rep = check_strategy2(cert, b_x, b_v, alpha, float(phi), norm_B, in_U0)
        n_ok = sum(cnd.passed for cnd in rep.conditions)
        worst = max((cnd.lhs - cnd.rhs for cnd in rep.conditions if not cnd.passed), default=-math.inf)
        key = (n_ok, -worst)
        if best_key is None or key > best_key:
            best, best_key = float(phi), key
    return best


def alpha_star(cert, b_x, b_v, norm_B, in_U0: bool = True, hi: float = 1e3, tol: float = 1e-6) -> Optional[float]:
    """Supremum of alpha for which :func:`check_strategy2` (with phi line search) passes.

    ``None`` if no alpha > 0 passes; ``math.inf`` if every alpha up to ``hi`` passes.
    """

    def ok(a):
        return check_strategy2(cert, b_x, b_v, a, None, norm_B, in_U0).verdict

    lo = tol
    if not ok(lo):
        return None
    if ok(hi):
        return math.inf
    while hi - lo > tol * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def check_lti_endtoend(
    cert: LyapunovCertificate,
    b_x: float,
    b_v: float,
    s0_norm: float,
    alpha: float,
    T_alpha: Optional[int],
    norm_B: float,
    info: Optional[InformationBounds] = None,
    phi: float = 0.0,
    L3: Optional[float] = None,
) -> StealthinessReport:
    """KL budget for the LTI recurrence s+ = A s on a linear plant.

    ``L3`` defaults to L'_Pi (b_x + b_v + phi); an explicit value overrides it.
    Without ``info`` only the conditions are evaluated (kl_bound is NaN).
    """
    c = cert
    if L3 is None:
        L3 = c.Lp_pi * (b_x + b_v + phi)
    L3B = L3 * norm_B
    gap = c.c3 - c.c4 * L3B
    den = c.c4 * norm_B * c.Lp_pi
    s0_max = gap / den if den > 0 else math.inf
    conds = [_cond("L3|B| < c3/c4", L3B, c.c3 / c.c4), _cond("|s0| <= s0_max", s0_norm, s0_max, strict=False)]
    beta = _beta(c, gap)
    horizon = min(math.inf if T_alpha is None else T_alpha, _geometric_horizon(c, beta))
    if info is None:
        kl = math.nan
    elif s0_norm == 0:
        kl = 0.0
    else:
        kl = (info.lam_w + info.lam_joint * horizon) * s0_norm**2
    eps = epsilon_from_kl(kl) if np.isfinite(kl) else (1.0 if kl == math.inf else math.nan)
    return StealthinessReport(
        kl_bound=kl,
        epsilon=eps,
        conditions=conds,
        quantities=dict(L3=L3, L3B=L3B, gap=gap, beta=beta, s0_max=s0_max, horizon=horizon),
    )


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(M)))))


def check_lti_linear_feedback(
    A,
    B,
    K,
    C,
    gamma: float,
    s0,
    alpha: float,
    R_S: float,
    info: InformationBounds,
    strict_instability: bool = False,
    max_steps: int = 100_000,
) -> StealthinessReport:
    """KL budget for linear feedback u = K C x on an LTI plant.

    The attack succeeds with probability one.  A marginally unstable A
    (all |lambda| = 1 with Jordan growth) is accepted and flagged as
    ``polynomial_growth`` unless ``strict_instability`` is set.
    """
    A, B, K, C = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, K, C))
    s0 = np.atleast_1d(np.asarray(s0, dtype=float))
    Acl = A + B @ K @ C
    rho_cl = spectral_radius(Acl)
    if rho_cl >= 1:
        raise ValueError(f"closed loop is not stable (spectral radius {rho_cl:.6g} >= 1)")
    rho_A = spectral_radius(A)
    T = divergence_time(lambda s: A @ s, s0, alpha + R_S, max_steps)
    exponential = rho_A > 1 + 1e-12
    polynomial = (not exponential) and T is not None
    conds = [
        Condition("A unstable", rho_A, 1.0, bool(exponential or (polynomial and not strict_instability))),
        Condition("offset reaches alpha + R_S", math.nan if T is None else float(T), float(max_steps), T is not None),
    ]
    if T is None:
        kl = math.inf
    else:
        kl = info.lam_joint * (2 * gamma * T + float(np.linalg.norm(s0))) / (1 - rho_cl)
    return StealthinessReport(
        kl_bound=kl,
        epsilon=epsilon_from_kl(kl) if np.isfinite(kl) else 1.0,
        conditions=conds,
        quantities=dict(T=T, rho_closed=rho_cl, rho_A=rho_A, polynomial_growth=polynomial, delta=1.0),
    )


# ---------------------------------------------------------------- U_rho membership


@dataclass
class InstabilityReport:
    analytic_pass: bool
    ratio_inf: float
    decrease_margin: float
    gradient_margin: float
    exit_fraction: float
    exit_steps: np.ndarray
    rho: float

    @property
    def member(self) -> bool:
        return self.analytic_pass or self.exit_fraction == 1.0


def _sample_region(V, r1, r2, n, dim, rng, max_tries=200):
    out = []
    got = 0
    for _ in range(max_tries):
        X = sample_ball(rng, 4 * n, dim, r1)
        nx = np.linalg.norm(X, axis=1)
        X = X[(nx >= r2) & (V(X) > 0)]
        out.append(X)
        got += len(X)
        if got >= n:
            break
    X = np.concatenate(out)[:n]
    if len(X) == 0:
        raise ConfigError("sample region {x in B_r1 : V(x) > 0, |x| >= r2} is empty")
    return X


def instability_test(
    f: Callable,
    V: Callable,
    grad_V: Callable,
    alpha_fn: Callable,
    beta_fn: Callable,
    rho: float,
    r1: float,
    r2: float,
    n_samples: int = 1000,
    dim: int = 2,
    seed: int = 0,
    starts=None,
    max_steps: int = 1000,
    rtol: float = 1e-9,
) -> InstabilityReport:
    """Sampling test for f in U_rho.

    Analytic path: on {x in B_r1 : V(x) > 0, |x| >= r2} check
    V(f(x)) - V(x) >= alpha(|x|), |grad V(x)| <= beta(|x|) and
    inf alpha/beta > rho.  Empirical path: iterate x+ = f(x) + d with the
    disturbance d = -rho grad V / |grad V| pushing against growth of V and
    record whether each start leaves B_r1.
    """
    if not r1 > r2 > 0:
        raise ConfigError("need r1 > r2 > 0")
    rng = np.random.default_rng(seed)
    X = _sample_region(V, r1, r2, n_samples, dim, rng)
    nx = np.linalg.norm(X, axis=1)
    a = alpha_fn(nx)
    bval = beta_fn(nx)
    dec = V(f(X)) - V(X) - a
    gv = np.linalg.norm(grad_V(X), axis=1)
    decrease_margin = float(np.min(dec / np.maximum(np.abs(a), 1e-300)))
    gradient_margin = float(np.max((gv - bval) / np.maximum(bval, 1e-300)))
    ratio = float(np.min(a / bval))
    analytic = decrease_margin >= -rtol and gradient_margin <= rtol and ratio > rho

    S = X if starts is None else np.atleast_2d(np.asarray(starts, dtype=float))
    x = S.copy()
    exit_step = np.full(len(S), -1)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, max_steps + 1):
            g = grad_V(x)
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            d = -rho * np.divide(g, gn, out=np.zeros_like(g), where=gn > 0)
            x = f(x) + d
            nrm = np.linalg.norm(x, axis=1)
            out = ((nrm > r1) | ~np.isfinite(nrm)) & (exit_step < 0)
            exit_step[out] = t
            if np.all(exit_step >= 0):
                break
    return InstabilityReport(
        analytic_pass=bool(analytic),
        ratio_inf=ratio,
        decrease_margin=decrease_margin,
        gradient_margin=gradient_margin,
        exit_fraction=float(np.mean(exit_step >= 0)),
        exit_steps=exit_step,
        rho=rho,
    )


# ---------------------------------------------------------------- residual envelopes


def fit_decay_rate(r_norm, s0_norm: float, gain: float = 1.0, t_max: Optional[int] = None) -> float:
    """Least-squares beta with log(|r_t| / (gain |s0|)) ~ -beta t, line through the origin."""
    r = np.asarray(r_norm, dtype=float)
    t = np.arange(len(r)) if t_max is None else np.arange(min(len(r), t_max + 1))
    y = np.log(np.maximum(r[: len(t)], 1e-300) / (gain * s0_norm))
    return float(-(t @ y) / (t @ t))


def envelope_holds(r_norm, s0_norm: float, beta: float, gain: float = 1.0, slack: float = 1.1, t_max=None) -> bool:
    r = np.asarray(r_norm, dtype=float)
    n = len(r) if t_max is None else min(len(r), t_max + 1)
    t = np.arange(n)
    return bool(np.all(r[:n] <= slack * gain * np.exp(-beta * t) * s0_norm))


# ---------------------------------------------------------------- linear-Gaussian desk case


@dataclass
class GaussianDeskCase:
    """Exact observation laws of a scalar LTI loop with and without an LTI offset attack.

    The loop is x+ = a x + b u + w, y = x + v, u = k y, observed over steps
    ``burn .. burn + T`` from x_0 = 0, with the attack starting at ``burn``.
    """

    a: float
    b: float
    k: float
    sigma_w: float
    sigma_v: float
    s0: float
    burn: int
    T: int
    mu_p: np.ndarray
    mu_q: np.ndarray
    cov: np.ndarray
    r: np.ndarray

    @property
    def kl_exact(self) -> float:
        return gaussian_kl_same_cov(self.mu_q, self.mu_p, self.cov)

    @property
    def kl_bound(self) -> float:
        """Sum of lam_joint |r_i|^2 along the residual path."""
        info = InformationBounds.from_covariances([[self.sigma_w]], [[self.sigma_v]], [[1.0]])
        return float(info.lam_joint * np.sum(self.r**2))

    def log_lr(self, Y: np.ndarray) -> np.ndarray:
        """log q(Y)/p(Y) for rows of Y."""
        d = self.mu_q - self.mu_p
        Sd = np.linalg.solve(self.cov, d)
        return (Y - self.mu_p) @ Sd - 0.5 * d @ Sd


def scalar_lti_desk(a, b, k, sigma_w, sigma_v, s0, T, burn=60) -> GaussianDeskCase:
    acl = a + b * k
    n_steps = burn + T + 1
    # y_t = x_t + v_t with x_t = sum_j acl^(t-1-j) (w_j + b k v_j)
    Gw = np.zeros((n_steps, n_steps))
    Gv = np.eye(n_steps)
    for t in range(1, n_steps):
        for j in range(t):
            c = acl ** (t - 1 - j)
            Gw[t, j] = c
            Gv[t, j] += b * k * c
    full = sigma_w * Gw @ Gw.T + sigma_v * Gv @ Gv.T
    win = slice(burn, burn + T + 1)
    cov = full[win, win]
    r = -s0 * acl ** np.arange(T + 1)
    mu_p = np.zeros(T + 1)
    return GaussianDeskCase(a, b, k, sigma_w, sigma_v, s0, burn, T, mu_p, mu_p + r, cov, r)


def likelihood_ratio_error(desk: GaussianDeskCase, Y_free: np.ndarray, Y_att: np.ndarray):
    """Empirical (p_e, standard error) of the Bayes likelihood-ratio detector."""
    p_fa = float(np.mean(desk.log_lr(Y_free) > 0))
    p_td = float(np.mean(desk.log_lr(Y_att) > 0))
    se = math.sqrt(p_fa * (1 - p_fa) / len(Y_free) + p_td * (1 - p_td) / len(Y_att))
    return 1 - p_td + p_fa, se
