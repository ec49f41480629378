"""System-level hyperparameters shared by every module."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

MODES = ("ota", "ideal", "conventional")
OPTIMIZERS = ("sgd", "adam")
# "weighted": descale so the estimator mean is the beta-weighted average
# (weights sum to one).  "literal": literal constants with the extra M and C
# factors, kept for comparison against the literal closed-form lines.
NORMALIZATIONS = ("weighted", "literal")


@dataclass(frozen=True)
class SystemConfig:
    C: int = 4
    M: int = 5
    K: int = 100
    K_ps: int = 100
    I: int = 1
    tau: int = 1
    T: int = 400
    N: int = 3925
    path_loss_exp: float = 4.0
    sigma_h2: float = 1.0
    sigma_z2: float = 10.0
    # power schedule P_t = p0 + p_slope * t, P_IS,t = is_power_ratio * P_t
    p0: float = 1.0
    p_slope: float = 1e-2
    is_power_ratio: float = 20.0
    low_power: bool = False
    # learning-rate schedule eta(t) = lr0 - lr_slope * t
    lr0: float = 3e-2
    lr_slope: float = 0.0
    optimizer: str = "adam"
    batch_size: int = 500
    mode: str = "ota"
    normalization: str = "weighted"
    seed: int = 0

    def __post_init__(self):
        for name in ("C", "M", "K", "K_ps", "I", "tau", "N", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if self.path_loss_exp <= 0:
            raise ValueError("path_loss_exp must be > 0")
        if self.sigma_h2 <= 0:
            raise ValueError("sigma_h2 must be > 0")
        if self.sigma_z2 < 0:
            raise ValueError("sigma_z2 must be >= 0")
        if self.p0 <= 0 or self.is_power_ratio <= 0:
            raise ValueError("power multipliers must be positive")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.mode == "conventional" and self.I != 1:
            raise ValueError("conventional mode requires I == 1 (use for_mode)")

    @property
    def model_dim(self) -> int:
        return 2 * self.N

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def for_mode(self, mode: str) -> "SystemConfig":
        """Same system in another mode, keeping the normalized time I*T fixed."""
        if mode == "conventional":
            return self.replace(mode=mode, I=1, T=self.T * self.I)
        return self.replace(mode=mode)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)
