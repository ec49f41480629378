"""Planar placement of the parameter server, intermediate servers and users."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .config import SystemConfig
from .numerics import RngStream

IS_RADIUS = (0.5, 3.0)
MU_RADIUS = (0.5, 1.0)
MIN_DISTANCE = 1e-6


def path_loss(d, p: float):
    """Large-scale fading coefficient d**(-p)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    out = d ** (-float(p))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class Topology:
    """Static geometry of one experiment.

    Index conventions: ``beta[c_tx, m, c_rx]`` is the coefficient from user
    ``m`` of cluster ``c_tx`` to the server of cluster ``c_rx``.
    The parameter server sits at the origin.
    """

    is_positions: np.ndarray  # (C, 2)
    mu_positions: np.ndarray  # (C, M, 2)
    path_loss_exp: float
    d_is: np.ndarray  # (C,)
    d: np.ndarray  # (C, M, C)
    d_mu_ps: np.ndarray  # (C, M)
    beta_is: np.ndarray
    beta: np.ndarray
    beta_mu_ps: np.ndarray

    @classmethod
    def from_positions(cls, is_positions, mu_positions, path_loss_exp: float) -> "Topology":
        is_pos = np.array(is_positions, dtype=float).reshape(-1, 2)
        mu_pos = np.array(mu_positions, dtype=float)
        C = is_pos.shape[0]
        if mu_pos.ndim != 3 or mu_pos.shape[0] != C or mu_pos.shape[2] != 2:
            raise ValueError("mu_positions must have shape (C, M, 2)")
        d_is = np.linalg.norm(is_pos, axis=-1)
        d = np.linalg.norm(mu_pos[:, :, None, :] - is_pos[None, None, :, :], axis=-1)
        d_mu_ps = np.linalg.norm(mu_pos, axis=-1)
        for arr in (d_is, d, d_mu_ps):
            arr.setflags(write=False)
        return cls(
            is_positions=is_pos,
            mu_positions=mu_pos,
            path_loss_exp=float(path_loss_exp),
            d_is=d_is,
            d=d,
            d_mu_ps=d_mu_ps,
            beta_is=path_loss(d_is, path_loss_exp),
            beta=path_loss(d, path_loss_exp),
            beta_mu_ps=path_loss(d_mu_ps, path_loss_exp),
        )

    @property
    def C(self) -> int:
        return self.is_positions.shape[0]

    @property
    def M(self) -> int:
        return self.mu_positions.shape[1]

    def own_beta(self) -> np.ndarray:
        """(C, M) coefficients of every user towards its own server."""
        c = np.arange(self.C)
        return self.beta[c, :, c]

    def beta_bars(self) -> Tuple[np.ndarray, float]:
        return beta_bars(self)

    def min_distance(self) -> float:
        return float(min(self.d_is.min(), self.d.min(), self.d_mu_ps.min()))

    def to_dict(self) -> dict:
        return {
            "path_loss_exp": self.path_loss_exp,
            "is_positions": self.is_positions.tolist(),
            "mu_positions": self.mu_positions.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "Topology":
        return cls.from_positions(doc["is_positions"], doc["mu_positions"], doc["path_loss_exp"])

    @classmethod
    def from_json(cls, text: str) -> "Topology":
        return cls.from_dict(json.loads(text))


def beta_bars(top: Topology) -> Tuple[np.ndarray, float]:
    """Per-cluster sums of own-user coefficients, and the sum over servers."""
    return top.own_beta().sum(axis=1), float(top.beta_is.sum())


def _polar(gen, n, r_lo, r_hi):
    r = gen.uniform(r_lo, r_hi, size=n)
    phi = gen.uniform(0.0, 2.0 * np.pi, size=n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)


def sample_topology(config: SystemConfig, stream: RngStream) -> Topology:
    """Servers uniformly at radius [0.5, 3] from the PS, users at [0.5, 1] from their server."""
    gen = stream.generator()
    while True:
        is_pos = _polar(gen, config.C, *IS_RADIUS)
        offsets = _polar(gen, (config.C, config.M), *MU_RADIUS)
        mu_pos = is_pos[:, None, :] + offsets
        top = Topology.from_positions(is_pos, mu_pos, config.path_loss_exp)
        if top.min_distance() >= MIN_DISTANCE:
            return top


def symmetric_topology(C: int, M: int, r_is: float = 2.0, r_mu: float = 1.0,
                       path_loss_exp: float = 4.0) -> Topology:
    """Servers evenly on a circle, users evenly around each server.

    All own-cluster coefficients are equal, as are all server coefficients.
    """
    a = 2 * np.pi * np.arange(C) / C
    is_pos = r_is * np.stack([np.cos(a), np.sin(a)], axis=-1)
    b = 2 * np.pi * (np.arange(M) + 0.5) / M
    ring = r_mu * np.stack([np.cos(b), np.sin(b)], axis=-1)
    mu_pos = is_pos[:, None, :] + ring[None, :, :]
    return Topology.from_positions(is_pos, mu_pos, path_loss_exp)
