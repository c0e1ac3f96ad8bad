"""Offset recurrences for stealthy sensing attacks and the falsified measurement channel.

The attacker keeps an offset s_t and makes every channel the controller sees
consistent with the fake state e_t = x^a_t - s_t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import NoiseStream, PlantModel, linearize
from .sensing import PerceptionMap, perceive_attacked

STRATEGIES = ("estimate_based", "open_loop", "lti")


@dataclass(frozen=True)
class AttackConfig:
    """``estimate_based``: s+ = f(xh) - f(xh - s) with xh = x^a + zeta, |zeta| <= b_zeta.
    ``open_loop``: s+ = f(s).  ``lti``: s+ = A s, A the Jacobian at the origin.
    """

    strategy: str
    s0: np.ndarray
    b_zeta: Optional[float] = None
    start_step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "s0", np.asarray(self.s0, dtype=float))
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; valid: {list(STRATEGIES)}")
        if not np.all(np.isfinite(self.s0)):
            raise ValueError("s0 must be finite")
        if self.strategy == "estimate_based" and self.b_zeta is None:
            raise ValueError("estimate_based attacks need b_zeta")
        if self.b_zeta is not None and self.b_zeta < 0:
            raise ValueError("b_zeta must be nonnegative")
        if self.start_step < 0:
            raise ValueError("start_step must be >= 0")


@dataclass
class AttackState:
    s: np.ndarray
    zeta: np.ndarray = field(default=None)

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        if self.zeta is None:
            self.zeta = np.zeros_like(self.s)


def _strategy1_offset(model: PlantModel, s: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    if model.A is not None:
        # f(xh) - f(xh - s) = A s exactly for a linear drift; use the
        # algebraic form so the recurrence does not pick up rounding from xh.
        return model.f(s)
    return model.f(x_hat) - model.f(x_hat - s)


def advance_strategy1(model: PlantModel, st: AttackState, x_a, zeta) -> AttackState:
    """One step of the estimate-based recurrence.

    ``zeta`` is the attacker's current estimation error (drawn by the caller,
    e.g. uniformly on the b_zeta ball).
    """
    x_hat = np.asarray(x_a, dtype=float) + np.asarray(zeta, dtype=float)
    return AttackState(s=_strategy1_offset(model, st.s, x_hat), zeta=np.asarray(zeta, dtype=float))


def advance_strategy2(model: PlantModel, st: AttackState, lti: bool = False, A: Optional[np.ndarray] = None) -> AttackState:
    """s+ = f(s), or s+ = A s with A = linearize(model, 0) when ``lti``."""
    if lti:
        if A is None:
            A = linearize(model, np.zeros(model.state_dim))
        return AttackState(s=st.s @ A.T)
    return AttackState(s=model.f(st.s))


def falsify_measurements(model: PlantModel, pmap: PerceptionMap, x_a, s, v_s):
    """Return (y_p_a, y_s_a) evaluated at the fake state e = x_a - s."""
    e = np.asarray(x_a, dtype=float) - np.asarray(s, dtype=float)
    return perceive_attacked(pmap, e), e @ model.C_s.T + np.asarray(v_s, dtype=float)


class Attacker:
    """Batched offset generator used by the simulator.

    ``offset(t, s_prev, x_a_prev)`` returns s_t given s_{t-1} and x^a_{t-1}
    (for t = 0 the previous values are ignored).
    """

    def __init__(self, cfg: AttackConfig):
        self.cfg = cfg
        self._model = None
        self._zeta = None
        self._A = None

    def begin(self, model: PlantModel, seeds: Sequence[int], horizon: int):
        if self.cfg.s0.shape != (model.state_dim,):
            raise ValueError(f"s0 must have shape ({model.state_dim},)")
        self._model = model
        n = model.state_dim
        if self.cfg.strategy == "estimate_based" and self.cfg.b_zeta > 0:
            self._zeta = np.stack(
                [NoiseStream(int(s), "estimation").ball(horizon + 1, n, self.cfg.b_zeta) for s in seeds], axis=0
            )
        else:
            self._zeta = np.zeros((len(seeds), horizon + 1, n))
        if self.cfg.strategy == "lti":
            self._A = linearize(model, np.zeros(n))

    @property
    def zeta(self) -> np.ndarray:
        return self._zeta

    def offset(self, t: int, s_prev: np.ndarray, x_a_prev: np.ndarray) -> np.ndarray:
        start = self.cfg.start_step
        N = s_prev.shape[0]
        if t < start:
            return np.zeros_like(s_prev)
        if t == start:
            return np.broadcast_to(self.cfg.s0, (N, self.cfg.s0.size)).copy()
        st = AttackState(s=s_prev)
        if self.cfg.strategy == "estimate_based":
            return advance_strategy1(self._model, st, x_a_prev, self._zeta[:, t - 1]).s
        if self.cfg.strategy == "lti":
            return advance_strategy2(self._model, st, lti=True, A=self._A).s
        return advance_strategy2(self._model, st).s


def offset_sequence(model: PlantModel, cfg: AttackConfig, x_a: np.ndarray, zeta: Optional[np.ndarray] = None) -> np.ndarray:
    """Offsets s_0..s_T along a given attacked-state path (T = len(x_a) - 1).

    Useful for replaying a recurrence offline; ``zeta`` defaults to zero.
    """
    x_a = np.asarray(x_a, dtype=float)
    T = x_a.shape[0] - 1
    zeta = np.zeros_like(x_a) if zeta is None else np.asarray(zeta, dtype=float)
    A = linearize(model, np.zeros(model.state_dim)) if cfg.strategy == "lti" else None
    out = np.zeros_like(x_a)
    st = AttackState(s=np.zeros(model.state_dim))
    for t in range(T + 1):
        if t == cfg.start_step:
            st = AttackState(s=cfg.s0.copy())
        elif t > cfg.start_step:
            if cfg.strategy == "estimate_based":
                st = advance_strategy1(model, st, x_a[t - 1], zeta[t - 1])
            else:
                st = advance_strategy2(model, st, lti=cfg.strategy == "lti", A=A)
        out[t] = st.s
    return out
