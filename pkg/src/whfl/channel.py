"""Small-scale fading and receiver noise for one aggregation event.

A draw is a pure function of ``(stream, indices)``.  Normals are consumed in the
order documented in :mod:`whfl._kernels_py`, so a materialized draw and the
fused kernel see exactly the same channel realization for the same stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import SystemConfig
from .numerics import RngStream
from .topology import Topology


@dataclass(frozen=True, eq=False)
class ClusterChannelDraw:
    """``h[..., c_tx, m, c_rx, k, n]`` and ``z[..., c_rx, k, n]``."""

    h: np.ndarray
    z: np.ndarray

    @property
    def batch_shape(self):
        return self.h.shape[:-5]


@dataclass(frozen=True, eq=False)
class GlobalChannelDraw:
    """``h_ps[..., c, k', n]`` and ``z_ps[..., k', n]``."""

    h_ps: np.ndarray
    z_ps: np.ndarray

    @property
    def batch_shape(self):
        return self.h_ps.shape[:-3]


def link_amplitudes(beta, sigma_h2: float) -> np.ndarray:
    """Standard deviation of each real component of CN(0, beta*sigma_h2)."""
    return np.sqrt(np.asarray(beta, dtype=float) * sigma_h2 / 2.0)


def noise_amplitude(sigma_z2: float) -> float:
    return float(np.sqrt(sigma_z2 / 2.0))


def _draw_block(gen, amp, K, N, noise_amp, batch):
    """Materialize h (..., R, K, J, N) and z (..., R, K, N) in canonical order."""
    R, J = amp.shape
    g = gen.standard_normal(tuple(batch) + (R, K, J + 1, 2, N))
    a = amp[:, None, :, None]
    h = a * g[..., :J, 0, :] + 1j * (a * g[..., :J, 1, :])
    z = noise_amp * g[..., J, 0, :] + 1j * (noise_amp * g[..., J, 1, :])
    return h, z


def _batch(batch) -> tuple:
    if batch is None:
        return ()
    if np.isscalar(batch):
        return (int(batch),)
    return tuple(int(b) for b in batch)


def cluster_link_table(beta: np.ndarray, sigma_h2: float):
    """Per-receiver amplitude and own-cluster mask for ``beta[c_tx, m, c_rx]``.

    Transmitter ``j`` enumerates ``(c_tx, m)`` in row-major order.
    """
    Ctx, M, Crx = beta.shape
    amp = link_amplitudes(beta, sigma_h2).reshape(Ctx * M, Crx).T.copy()
    own = np.zeros((Crx, Ctx * M), dtype=bool)
    for c in range(min(Ctx, Crx)):
        own[c, c * M:(c + 1) * M] = True
    return amp, own


def _draw_links(beta, K, N, sigma_h2, sigma_z2, stream, batch):
    Ctx, M, Crx = beta.shape
    amp, _ = cluster_link_table(beta, sigma_h2)
    b = _batch(batch)
    h, z = _draw_block(stream.generator(), amp, K, N, noise_amplitude(sigma_z2), b)
    # (..., R, K, J, N) -> (..., c_tx, m, c_rx, k, n)
    h = h.reshape(b + (Crx, K, Ctx, M, N))
    nb = len(b)
    h = np.moveaxis(h, (nb + 2, nb + 3), (nb, nb + 1))
    return ClusterChannelDraw(h=np.ascontiguousarray(h), z=z)


def draw_cluster_channels(top: Topology, cfg: SystemConfig, stream: RngStream,
                          batch=None) -> ClusterChannelDraw:
    """Fading from every user to every intermediate server, plus server noise.

    ``batch`` prepends independent realizations (consumed one after another
    from the same stream, so batch entry ``b`` equals what a sequential
    per-trial loop would have drawn).
    """
    return _draw_links(top.beta, cfg.K, cfg.N, cfg.sigma_h2, cfg.sigma_z2, stream, batch)


def draw_conventional_channels(top: Topology, cfg: SystemConfig, stream: RngStream,
                               batch=None) -> ClusterChannelDraw:
    """Single-hop draw: all C*M users towards the K' antennas of the PS.

    Laid out as one cluster of C*M users so the cluster machinery applies.
    """
    beta = top.beta_mu_ps.reshape(1, -1, 1)
    return _draw_links(beta, cfg.K_ps, cfg.N, cfg.sigma_h2, cfg.sigma_z2, stream, batch)


def draw_global_channels(top: Topology, cfg: SystemConfig, stream: RngStream,
                         batch: Optional[int] = None) -> GlobalChannelDraw:
    """Fading from every intermediate server to the PS antennas, plus PS noise."""
    amp = link_amplitudes(top.beta_is, cfg.sigma_h2)[None, :]
    b = _batch(batch)
    h, z = _draw_block(stream.generator(), amp, cfg.K_ps, cfg.N,
                       noise_amplitude(cfg.sigma_z2), b)
    nb = len(b)
    # (..., 1, K', C, N) -> (..., C, K', N)
    h_ps = np.ascontiguousarray(np.swapaxes(h[..., 0, :, :, :], nb, nb + 1))
    return GlobalChannelDraw(h_ps=h_ps, z_ps=z[..., 0, :, :])
