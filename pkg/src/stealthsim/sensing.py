"""Synthetic perception channel y^P = C_p x + v^P(x) with a bounded, state-dependent error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


def _zero_error(p: int) -> Callable[[np.ndarray], np.ndarray]:
    def err(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (p,))

    return err


@dataclass(frozen=True)
class TanhError:
    """v(x) = (gamma / sqrt(p)) * tanh(M x).

    Each component of tanh lies in (-1, 1), so ``||v(x)|| < gamma`` everywhere.
    ``M`` is scaled so that ``||M x||`` reaches ``gain`` on the sphere of radius
    ``safe_radius``, which makes the bound nearly tight at the boundary.
    """

    M: np.ndarray
    gamma: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.M.shape[0]
        return (self.gamma / np.sqrt(p)) * np.tanh(x @ self.M.T)

    @classmethod
    def build(
        cls,
        p: int,
        n: int,
        gamma: float,
        safe_radius: float,
        seed: int,
        depends_on: Optional[Sequence[int]] = None,
        gain: float = 3.0,
    ) -> "TanhError":
        rng = np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, 0x9E1]))
        M = rng.standard_normal((p, n))
        if depends_on is not None:
            mask = np.zeros(n, dtype=bool)
            mask[list(depends_on)] = True
            M[:, ~mask] = 0.0
        norm = np.linalg.norm(M, 2)
        if norm == 0.0:
            raise ValueError("perception error matrix is identically zero")
        return cls(M=(gain / safe_radius) * M / norm, gamma=float(gamma))


@dataclass(frozen=True)
class PerceptionMap:
    """Composition P∘G modelled directly: linear readout plus bounded error."""

    C_p: np.ndarray
    gamma: float
    safe_radius: float
    error_fn: Callable[[np.ndarray], np.ndarray] = None
    seed: int = 0
    error_kind: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "C_p", np.atleast_2d(np.asarray(self.C_p, dtype=float)))
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.safe_radius <= 0:
            raise ValueError("safe_radius must be positive")
        if self.error_fn is None:
            p = self.C_p.shape[0]
            fn = _zero_error(p) if self.gamma == 0 else TanhError.build(
                p, self.C_p.shape[1], self.gamma, self.safe_radius, self.seed
            )
            object.__setattr__(self, "error_fn", fn)

    @property
    def output_dim(self) -> int:
        return self.C_p.shape[0]

    @classmethod
    def tanh(cls, C_p, gamma, safe_radius, seed=0, depends_on=None) -> "PerceptionMap":
        C_p = np.atleast_2d(np.asarray(C_p, dtype=float))
        p, n = C_p.shape
        fn = _zero_error(p) if gamma == 0 else TanhError.build(p, n, gamma, safe_radius, seed, depends_on)
        return cls(C_p=C_p, gamma=float(gamma), safe_radius=float(safe_radius), error_fn=fn, seed=seed)


def perceive(pmap: PerceptionMap, x) -> np.ndarray:
    """C_p x + v^P(x); accepts a single state or a batch along leading axes."""
    x = np.asarray(x, dtype=float)
    return x @ pmap.C_p.T + pmap.error_fn(x)


def perceive_attacked(pmap: PerceptionMap, e) -> np.ndarray:
    """Perception output the controller receives when the scene shows fake state ``e``."""
    return perceive(pmap, e)
