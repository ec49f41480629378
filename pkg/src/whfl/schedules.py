"""Learning-rate and transmit-power schedules indexed by the global round t (0-based)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from .config import SystemConfig


@dataclass(frozen=True)
class Schedules:
    lr0: float = 3e-2
    lr_slope: float = 0.0
    p0: float = 1.0
    p_slope: float = 1e-2
    is_power_ratio: float = 20.0
    low_power: bool = False
    I: int = 1

    @classmethod
    def from_config(cls, cfg: SystemConfig) -> "Schedules":
        return cls(cfg.lr0, cfg.lr_slope, cfg.p0, cfg.p_slope, cfg.is_power_ratio,
                   cfg.low_power, cfg.I)

    def eta(self, t: int) -> float:
        return self.lr0 - self.lr_slope * t

    def p_user(self, t: int) -> float:
        p = self.p0 + self.p_slope * t
        if self.low_power and self.I == 1:
            p *= 0.5
        return p

    def p_is(self, t: int) -> float:
        # the low-power variant only throttles the users
        return self.is_power_ratio * (self.p0 + self.p_slope * t)

    def __call__(self, t: int) -> Tuple[float, float, float]:
        return self.eta(t), self.p_user(t), self.p_is(t)

    def check(self, T: int):
        """Raise if a rate or power becomes non-positive within T rounds."""
        for t in (0, max(T - 1, 0)):  # all three are affine in t
            eta, p, p_is = self(t)
            if eta <= 0 or p <= 0 or p_is <= 0:
                raise ValueError(f"schedule not positive at t={t}: eta={eta}, P_t={p}, P_IS={p_is}")


def schedules_eval(t: int, schedules: Schedules) -> Tuple[float, float, float]:
    """(eta(t), P_t, P_IS,t)."""
    return schedules(t)


# Settings of the convergence-rate figure: IS power is 10x user power.
BOUND_FIGURE_SCHEDULES = Schedules(lr0=5e-2, lr_slope=2e-5, p0=1.0, p_slope=1e-2,
                                   is_power_ratio=10.0)
