"""Analog over-the-air aggregation for both hops of the hierarchy.

Conventions
-----------
* ``deltas`` are real model differences ``(..., C, M, 2N)``; they are packed to
  ``N`` complex symbols before transmission.
* A cluster reception at IS ``c`` sums every user of every cluster; the
  combiner is the conjugate of the summed own-cluster channels averaged over
  the ``K`` antennas.
* Descaling divides by ``P * sigma_h2 * beta_bar`` and, with the ``literal``
  normalization, additionally by the transmitter count (M at the cluster hop,
  C at the global hop).

Every function accepting a materialized draw broadcasts over leading batch
axes of the draw, so Monte Carlo trials can be vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .channel import (
    ClusterChannelDraw,
    GlobalChannelDraw,
    cluster_link_table,
    link_amplitudes,
    noise_amplitude,
)
from .config import SystemConfig
from .numerics import RngStream, pack_complex, unpack_complex
from .topology import Topology

PS_TERM_COUNT = 9


@dataclass(frozen=True, eq=False)
class ClusterRxDecomposition:
    """Combined (pre-descale) cluster signal split into its four parts, ``(..., C, N)``."""

    signal: np.ndarray
    intra_interference: np.ndarray
    inter_interference: np.ndarray
    noise: np.ndarray
    total: np.ndarray

    def parts(self):
        return (self.signal, self.intra_interference, self.inter_interference, self.noise)


@dataclass(frozen=True, eq=False)
class PsTermDecomposition:
    """The nine parts of the combined PS signal, ``terms[..., l, N]`` for l = 1..9.

    ``descale`` maps combined symbols to the model-difference scale.
    ``total`` is the forward-simulated combined signal.
    """

    terms: np.ndarray
    total: np.ndarray
    descale: float

    def term(self, l: int) -> np.ndarray:
        if not 1 <= l <= PS_TERM_COUNT:
            raise ValueError(f"term index must be in 1..9, got {l}")
        return self.terms[..., l - 1, :]

    def descaled_terms(self) -> np.ndarray:
        """Real model-difference contributions ``(..., 9, 2N)``."""
        return unpack_complex(self.descale * self.terms)


# ---------------------------------------------------------------- descaling

def cluster_descale(top: Topology, cfg: SystemConfig, P_t: float) -> np.ndarray:
    """Per-cluster factor mapping combined symbols back to model differences."""
    beta_bar_c = top.own_beta().sum(axis=1)
    count = top.M if cfg.normalization == "literal" else 1
    return 1.0 / (P_t * count * cfg.sigma_h2 * beta_bar_c)


def global_descale(top: Topology, cfg: SystemConfig, P_IS: float) -> float:
    count = top.C if cfg.normalization == "literal" else 1
    return 1.0 / (P_IS * count * cfg.sigma_h2 * float(top.beta_is.sum()))


def conventional_descale(top: Topology, cfg: SystemConfig, P_t: float) -> float:
    count = top.C * top.M if cfg.normalization == "literal" else 1
    return 1.0 / (P_t * count * cfg.sigma_h2 * float(top.beta_mu_ps.sum()))


def cluster_weights(top: Topology) -> np.ndarray:
    """(C, M) weights beta_{c,m,c} / beta_bar_c of the cluster estimator mean."""
    own = top.own_beta()
    return own / own.sum(axis=1, keepdims=True)


def global_weights(top: Topology) -> np.ndarray:
    return top.beta_is / top.beta_is.sum()


def _check_power(P: float, name: str):
    if not P > 0:
        raise ValueError(f"{name} must be positive, got {P}")


def _check_deltas(deltas, C: int, M: int, N: int) -> np.ndarray:
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape[-3:] != (C, M, 2 * N):
        raise ValueError(f"deltas must have trailing shape {(C, M, 2 * N)}, got {deltas.shape}")
    return deltas


# ------------------------------------------------------------ cluster hop

def _own_channels(h: np.ndarray) -> np.ndarray:
    """h[..., c, m, c, k, n] for matching transmit/receive cluster."""
    return np.einsum("...cmckn->...cmkn", h)


def _cluster_parts(x, h, z, P):
    """Four-term split of the combined cluster signal (pre-descale).

    x (..., Ctx, M, N) complex; h (..., Ctx, M, Crx, K, N); z (..., Crx, K, N).
    Requires Ctx == Crx (own cluster of receiver c is transmitter cluster c).
    """
    C, M = h.shape[-5], h.shape[-4]
    K = h.shape[-2]
    ho = _own_channels(h)
    s = ho.sum(axis=-3)
    off_m = 1.0 - np.eye(M)
    off_c = 1.0 - np.eye(C)
    signal = (P / K) * np.einsum("...cmkn,...cmn->...cn", (ho * ho.conj()).real, x)
    intra = (P / K) * np.einsum("...cmkn,...cpkn,...cpn,mp->...cn",
                                ho.conj(), ho, x, off_m, optimize=True)
    inter = (P / K) * np.einsum("...ckn,...dmckn,...dmn,dc->...cn",
                                s.conj(), h, x, off_c, optimize=True)
    noise = (1.0 / K) * np.einsum("...ckn,...ckn->...cn", s.conj(), z)
    return signal, intra, inter, noise, s


def _cluster_forward(x, h, z, P, s):
    """Matched-combined received signal computed directly from its definition."""
    K = h.shape[-2]
    y = P * np.einsum("...dmckn,...dmn->...ckn", h, x) + z
    return (1.0 / K) * (s.conj() * y).sum(axis=-2)


def cluster_ota_round(deltas, top: Topology, cfg: SystemConfig, P_t: float,
                      draw: ClusterChannelDraw, decompose: bool = True):
    """One cluster aggregation at every IS.

    Returns ``(estimates (..., C, 2N), ClusterRxDecomposition or None)``.
    """
    _check_power(P_t, "P_t")
    deltas = _check_deltas(deltas, top.C, top.M, cfg.N)
    if draw.h.shape[-5:-2] != (top.C, top.M, top.C) or draw.h.shape[-2:] != (cfg.K, cfg.N):
        raise ValueError("cluster draw shape does not match topology/config")
    x = pack_complex(deltas)
    return _cluster_round(x, draw, P_t, cluster_descale(top, cfg, P_t), decompose)


def _cluster_round(x, draw, P, descale, decompose):
    signal, intra, inter, noise, s = _cluster_parts(x, draw.h, draw.z, P) if decompose \
        else (None, None, None, None, _own_channels(draw.h).sum(axis=-3))
    total = _cluster_forward(x, draw.h, draw.z, P, s)
    est = unpack_complex(np.asarray(descale)[..., None] * total)
    dec = None
    if decompose:
        dec = ClusterRxDecomposition(signal, intra, inter, noise, total)
    return est, dec


def cluster_ota_fast(deltas, top: Topology, cfg: SystemConfig, P_t: float,
                     stream: RngStream) -> np.ndarray:
    """Same estimates as ``cluster_ota_round`` with a draw from ``stream``,
    computed by the fused kernel without materializing the channel tensor."""
    _check_power(P_t, "P_t")
    deltas = _check_deltas(deltas, top.C, top.M, cfg.N)
    x = pack_complex(deltas).reshape(top.C * top.M, cfg.N)
    amp, own = cluster_link_table(top.beta, cfg.sigma_h2)
    y = kernels.ota_combine(stream.generator(), x, amp, own, cfg.K,
                            noise_amplitude(cfg.sigma_z2), P_t)
    return unpack_complex(cluster_descale(top, cfg, P_t)[:, None] * y)


def is_transmit_payload(cluster_estimates) -> np.ndarray:
    """Sum of the I per-iteration cluster estimates, ``(I, ..., C, 2N) -> (..., C, 2N)``."""
    est = np.asarray(cluster_estimates, dtype=float)
    return est.sum(axis=0)


# ------------------------------------------------------------- global hop

def _global_forward(p, a, z, P):
    """p (..., C, N) complex payloads; a (..., C, K', N); z (..., K', N)."""
    Kp = a.shape[-2]
    sa = a.sum(axis=-3)
    y = P * np.einsum("...ckn,...cn->...kn", a, p) + z
    return (1.0 / Kp) * (sa.conj() * y).sum(axis=-2)


def global_ota_round(payloads, top: Topology, cfg: SystemConfig, P_IS: float,
                     draw: GlobalChannelDraw, *, user_deltas=None,
                     cluster_draws: Optional[Sequence[ClusterChannelDraw]] = None,
                     P_t: Optional[float] = None):
    """Global aggregation at the PS.

    Returns ``(estimate (..., 2N), PsTermDecomposition or None)``.  The
    decomposition is produced when the user deltas ``(I, C, M, 2N)``, the
    ``I`` cluster draws and ``P_t`` that generated the payloads are given.
    """
    _check_power(P_IS, "P_IS")
    payloads = np.asarray(payloads, dtype=float)
    if payloads.shape[-2:] != (top.C, 2 * cfg.N):
        raise ValueError(f"payloads must have trailing shape {(top.C, 2 * cfg.N)}")
    if draw.h_ps.shape[-3:] != (top.C, cfg.K_ps, cfg.N):
        raise ValueError("global draw shape does not match topology/config")
    y = _global_forward(pack_complex(payloads), draw.h_ps, draw.z_ps, P_IS)
    est = unpack_complex(global_descale(top, cfg, P_IS) * y)
    dec = None
    if user_deltas is not None and cluster_draws is not None and P_t is not None:
        dec = decompose_ps_terms(user_deltas, cluster_draws, draw, top, cfg, P_t, P_IS)
    return est, dec


def global_ota_fast(payloads, top: Topology, cfg: SystemConfig, P_IS: float,
                    stream: RngStream) -> np.ndarray:
    _check_power(P_IS, "P_IS")
    x = pack_complex(np.asarray(payloads, dtype=float))
    amp = link_amplitudes(top.beta_is, cfg.sigma_h2)[None, :]
    own = np.ones_like(amp, dtype=bool)
    y = kernels.ota_combine(stream.generator(), x, amp, own, cfg.K_ps,
                            noise_amplitude(cfg.sigma_z2), P_IS)
    return unpack_complex(global_descale(top, cfg, P_IS) * y[0])


# ----------------------------------------------------------- conventional

def conventional_ota_round(deltas, top: Topology, cfg: SystemConfig, P_t: float,
                           draw: ClusterChannelDraw, decompose: bool = False):
    """Single hop: every user straight to the PS (one cluster of C*M users)."""
    _check_power(P_t, "P_t")
    deltas = _check_deltas(deltas, top.C, top.M, cfg.N)
    x = pack_complex(deltas).reshape(deltas.shape[:-3] + (1, top.C * top.M, cfg.N))
    est, dec = _cluster_round(x, draw, P_t, conventional_descale(top, cfg, P_t), decompose)
    return est[..., 0, :], dec


def conventional_ota_fast(deltas, top: Topology, cfg: SystemConfig, P_t: float,
                          stream: RngStream) -> np.ndarray:
    _check_power(P_t, "P_t")
    deltas = _check_deltas(deltas, top.C, top.M, cfg.N)
    x = pack_complex(deltas).reshape(top.C * top.M, cfg.N)
    amp = link_amplitudes(top.beta_mu_ps.reshape(1, -1), cfg.sigma_h2)
    own = np.ones_like(amp, dtype=bool)
    y = kernels.ota_combine(stream.generator(), x, amp, own, cfg.K_ps,
                            noise_amplitude(cfg.sigma_z2), P_t)
    return unpack_complex(conventional_descale(top, cfg, P_t) * y[0])


# ------------------------------------------------------ PS decomposition

def decompose_ps_terms(user_deltas, cluster_draws: Sequence[ClusterChannelDraw],
                       global_draw: GlobalChannelDraw, top: Topology, cfg: SystemConfig,
                       P_t: float, P_IS: float) -> PsTermDecomposition:
    """Split the combined PS signal into its nine channel/noise terms.

    Terms 1-4 pass through the own-server signal path at the PS, terms 5-8
    through cross-server interference; within each group the order is
    cluster signal, intra-cluster interference, inter-cluster interference,
    IS noise.  Term 9 is the PS noise.  ``total`` is computed by running the
    forward passes on the same draws.
    """
    _check_power(P_t, "P_t")
    _check_power(P_IS, "P_IS")
    user_deltas = np.asarray(user_deltas, dtype=float)
    I = user_deltas.shape[0]
    if len(cluster_draws) != I:
        raise ValueError(f"need {I} cluster draws, got {len(cluster_draws)}")
    _check_deltas(user_deltas, top.C, top.M, cfg.N)
    for d in cluster_draws:
        if d.h.shape[-5:] != (top.C, top.M, top.C, cfg.K, cfg.N):
            raise ValueError("cluster draw shape does not match topology/config")
    a, zp = global_draw.h_ps, global_draw.z_ps
    if a.shape[-3:] != (top.C, cfg.K_ps, cfg.N):
        raise ValueError("global draw shape does not match topology/config")

    d_c = cluster_descale(top, cfg, P_t)[:, None]
    parts = [0.0, 0.0, 0.0, 0.0]
    payload = 0.0
    for i in range(I):
        x = pack_complex(user_deltas[i])
        draw = cluster_draws[i]
        sig, intra, inter, noise, s = _cluster_parts(x, draw.h, draw.z, P_t)
        for j, part in enumerate((sig, intra, inter, noise)):
            parts[j] = parts[j] + d_c * part
        payload = payload + d_c * _cluster_forward(x, draw.h, draw.z, P_t, s)

    Kp = a.shape[-2]
    C = top.C
    own_gain = (P_IS / Kp) * (a * a.conj()).real.sum(axis=-2)  # (..., C, N)
    # cross[c'] = sum_k' a_c' * conj(sum_{c != c'} a_c)
    cross = (P_IS / Kp) * np.einsum("...dkn,...ckn,cd->...dn", a, a.conj(),
                                    1.0 - np.eye(C), optimize=True)
    terms = [(own_gain * p).sum(axis=-2) for p in parts]
    terms += [(cross * p).sum(axis=-2) for p in parts]
    terms.append((1.0 / Kp) * (a.sum(axis=-3).conj() * zp).sum(axis=-2))
    shape = np.broadcast_shapes(*(t.shape for t in terms))
    terms = np.stack([np.broadcast_to(t, shape) for t in terms], axis=-2)

    total = _global_forward(payload, a, zp, P_IS)
    return PsTermDecomposition(terms=terms, total=total,
                               descale=global_descale(top, cfg, P_IS))
