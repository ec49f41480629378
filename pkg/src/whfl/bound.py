"""Convergence bound: contraction X(t), error floor Y(t), trajectories and corollaries.

Three variants share the machinery:

* ``whfl``: the two-hop system on a sampled topology;
* ``conventional``: one cluster holding all C*M users with the PS as its
  receiver (K' antennas), I = 1, and the intermediate server collapsed onto
  the PS so every ratio involving its coefficient equals one;
* ``idealized``: error-free aggregation, keeping only the local-training
  groups of Y(t).

Geometric sums are accumulated with ``math.fsum``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import SystemConfig
from .schedules import Schedules
from .topology import MIN_DISTANCE, Topology, path_loss

VARIANTS = ("whfl", "conventional", "idealized")


@dataclass(frozen=True)
class BoundParams:
    L: float
    mu: float
    G2: float
    Gamma: float
    D0: float
    N: int
    C: int
    M: int
    K: int
    K_ps: int
    I: int
    tau: int
    sigma_h2: float
    sigma_z2: float
    schedules: Schedules

    def __post_init__(self):
        if not (self.L >= self.mu > 0):
            raise ValueError("need L >= mu > 0")
        if self.G2 < 0 or self.Gamma < 0 or self.D0 < 0:
            raise ValueError("G2, Gamma and D0 must be non-negative")

    @classmethod
    def from_config(cls, cfg: SystemConfig, L: float, mu: float, G2: float, Gamma: float,
                    D0: float, schedules: Schedules = None) -> "BoundParams":
        sched = schedules if schedules is not None else Schedules.from_config(cfg)
        return cls(L, mu, G2, Gamma, D0, cfg.N, cfg.C, cfg.M, cfg.K, cfg.K_ps, cfg.I,
                   cfg.tau, cfg.sigma_h2, cfg.sigma_z2, sched)


@dataclass(frozen=True, eq=False)
class Geometry:
    """What the bound needs from a topology.

    beta_cross[c, m, c2] is the coefficient from user m of cluster c to the
    server of cluster c2 (own-cluster entries sit on c2 == c).
    """

    beta_cross: np.ndarray  # (C, M, C)
    beta_is: np.ndarray  # (C,)
    K: int
    K_ps: int
    I: int

    @property
    def C(self) -> int:
        return self.beta_cross.shape[0]

    @property
    def M(self) -> int:
        return self.beta_cross.shape[1]

    @property
    def beta_own(self) -> np.ndarray:
        c = np.arange(self.C)
        return self.beta_cross[c, :, c]


def geometry_for(variant: str, params: BoundParams, top: Topology) -> Geometry:
    if variant in ("whfl", "idealized"):
        return Geometry(np.asarray(top.beta), np.asarray(top.beta_is),
                        params.K, params.K_ps, params.I)
    if variant == "conventional":
        collapsed = path_loss(MIN_DISTANCE, top.path_loss_exp)
        return Geometry(top.beta_mu_ps.reshape(1, -1, 1), np.array([collapsed]),
                        params.K_ps, params.K_ps, 1)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


# ---------------------------------------------------------------- X and A

def eta_limit(params: BoundParams) -> float:
    return min(1.0, 1.0 / (params.mu * params.tau * params.I))


def x_of_t(params: BoundParams, t: int, I: int = None) -> float:
    """Contraction factor 1 - mu*eta*I*(tau - eta*(tau - 1))."""
    I = params.I if I is None else I
    eta = params.schedules.eta(t)
    if eta > eta_limit(params) or eta < 0:
        warnings.warn(f"eta({t}) = {eta} outside [0, {eta_limit(params)}]", stacklevel=2)
    return 1.0 - params.mu * eta * I * (params.tau - eta * (params.tau - 1))


def _bracket(M, C, K, Kp, I):
    return 4 + 2 * (Kp - 1) + (M - 1) * (K - 1) * (I - 1) * (2 + (Kp - 1) * (C - 1))


def a_matrix(top_or_geom, K: int = None, K_ps: int = None, I: int = None) -> np.ndarray:
    """A for all index tuples, laid out as [c1, m1, c2, m2]."""
    if isinstance(top_or_geom, Geometry):
        g = top_or_geom
    else:
        g = Geometry(np.asarray(top_or_geom.beta), np.asarray(top_or_geom.beta_is), K, K_ps, I)
    C, M = g.C, g.M
    bo = g.beta_own
    bbar_c = bo.sum(axis=1)
    bbar = g.beta_is.sum()
    r = bo * g.beta_is[:, None] / (bbar * bbar_c[:, None])  # (C, M)
    br = _bracket(M, C, g.K, g.K_ps, g.I)
    rr = r[:, :, None, None] * r[None, None, :, :]
    return 1.0 - r[:, :, None, None] - r[None, None, :, :] + rr * br / (M * C * g.K * g.K_ps * g.I)


def a_coeff(params: BoundParams, top: Topology, m1: int, m2: int, c1: int, c2: int) -> float:
    C, M = top.C, top.M
    for name, v, hi in (("m1", m1, M), ("m2", m2, M), ("c1", c1, C), ("c2", c2, C)):
        if not 0 <= v < hi:
            raise IndexError(f"{name}={v} out of range [0, {hi})")
    A = a_matrix(top, params.K, params.K_ps, params.I)
    return float(A[c1, m1, c2, m2])


# ------------------------------------------------------------------- Y(t)

@dataclass(frozen=True)
class _GeomSums:
    a_sum: float
    inter: float  # cross-cluster PS interference of the signal path
    kp_group: float  # (K'+1) group
    cross_group: float
    noise_is: float  # sum_c beta_IS,c
    noise_user: float  # multiplies 1/P_t^2
    noise_cross: float  # multiplies 1/P_IS^2


def _fsum(a) -> float:
    return math.fsum(np.ravel(a))


def geometry_sums(g: Geometry) -> _GeomSums:
    C, M, K, Kp, I = g.C, g.M, g.K, g.K_ps, g.I
    b = g.beta_cross
    bo = g.beta_own
    bis = g.beta_is
    bbar_c = bo.sum(axis=1)
    off_c = 1.0 - np.eye(C)

    a_sum = _fsum(a_matrix(g))
    # sum_c sum_{c' != c} sum_{m1, m2} bIS_c bIS_c' b_c'm1 b_c'm2 / bbar_c'^2
    pair = bo[:, :, None] * bo[:, None, :] / (bbar_c ** 2)[:, None, None]
    per_cp = bis * np.array([_fsum(p) for p in pair])
    inter = _fsum(off_c * bis[:, None] * per_cp[None, :]) if C > 1 else 0.0
    # (K'+1) group: sum_c sum_m (K'+1) bIS_c^2 b_cm / bbar_c^2 * (sum_{m'!=m} b_cm'c + sum_{c'!=c} sum_m' b_{c,m',c'})
    leak_out = np.array([_fsum(b[c][:, np.arange(C) != c]) for c in range(C)])  # (C,)
    intra_rest = bbar_c[:, None] - bo
    kp_terms = (Kp + 1) * (bis ** 2)[:, None] * bo / (bbar_c ** 2)[:, None] * (intra_rest + leak_out[:, None])
    kp_group = _fsum(kp_terms)
    # cross group: sum_c sum_{c'!=c} sum_m bIS_c bIS_c' b_c'm / bbar_c'^2 (sum_{m'!=m} b_c'm' + sum_{c''!=c'} b_{c',m,c''})
    cross_terms = []
    for c in range(C):
        for cp in range(C):
            if cp == c:
                continue
            leak_m = b[cp][:, np.arange(C) != cp].sum(axis=1)  # (M,)
            cross_terms.append(bis[c] * bis[cp] * bo[cp] / bbar_c[cp] ** 2
                               * (bbar_c[cp] - bo[cp] + leak_m))
    cross_group = _fsum(np.concatenate(cross_terms)) if cross_terms else 0.0
    noise_is = _fsum(bis)
    noise_user = _fsum(bis[:, None] * (Kp + 1) * bis[:, None] * bo / (bbar_c ** 2)[:, None])
    noise_cross = 0.0
    if C > 1:
        q = bis[:, None] * bo / (bbar_c ** 2)[:, None]  # (C', M)
        noise_cross = _fsum(bis[:, None, None] * off_c[:, :, None] * q[None, :, :])
    return _GeomSums(a_sum, inter, kp_group, cross_group, noise_is, noise_user, noise_cross)


def _y_from_sums(params: BoundParams, g: Geometry, s: _GeomSums, t: int,
                 variant: str) -> float:
    eta = params.schedules.eta(t)
    P_t = params.schedules.p_user(t)
    P_is = params.schedules.p_is(t)
    G2, tau, mu = params.G2, params.tau, params.mu
    I = g.I
    parts = []
    if variant != "idealized":
        C, M, K, Kp = g.C, g.M, g.K, g.K_ps
        bbar = float(g.beta_is.sum())
        parts.append(eta ** 2 * G2 * I ** 2 * tau ** 2 / (M ** 2 * C ** 2) * s.a_sum)
        if C > 1:
            lead = 2 + (M - 1) * (C - 2) * (K - 1) * (I - 1)
            parts.append(lead * eta ** 2 * I * G2 * tau ** 2
                         / (K * Kp * M ** 3 * C ** 2 * (C - 1) * bbar ** 2) * s.inter)
        common = eta ** 2 * G2 * I * tau ** 2 / (K * Kp * M ** 2 * C ** 2 * bbar ** 2)
        parts.append(common * s.kp_group)
        parts.append(common * s.cross_group)
        noise = params.sigma_z2 * params.N / (Kp * C ** 2 * params.sigma_h2 * bbar ** 2)
        parts.append(noise * (s.noise_is / P_is ** 2
                              + I / (K * M ** 2) * (s.noise_user / P_t ** 2
                                                    + s.noise_cross / P_is ** 2)))
    parts.append((1 + mu * (1 - eta)) * eta ** 2 * I * G2 * tau * (tau - 1) * (2 * tau - 1) / 6)
    parts.append(eta ** 2 * I * (tau ** 2 + tau - 1) * G2)
    parts.append(2 * eta * I * (tau - 1) * params.Gamma)
    return math.fsum(parts)


def y_of_t(params: BoundParams, top: Topology, t: int, variant: str = "whfl") -> float:
    g = geometry_for(variant, params, top)
    return _y_from_sums(params, g, geometry_sums(g), t, variant)


# ----------------------------------------------------------- trajectories

def recursion(X: Sequence[float], Y: Sequence[float], D0: float) -> np.ndarray:
    """E_0 = D0, E_{t+1} = X_t E_t + Y_t."""
    out = np.empty(len(X) + 1)
    out[0] = D0
    for t, (x, y) in enumerate(zip(X, Y)):
        out[t + 1] = x * out[t] + y
    return out


def closed_form(X: Sequence[float], Y: Sequence[float], D0: float) -> np.ndarray:
    """Product/sum form: E_t = (prod_{a<t} X_a) D0 + sum_{b<t} Y_b prod_{b<a<t} X_a."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    T = len(X)
    out = np.empty(T + 1)
    for t in range(T + 1):
        terms = [math.prod(X[:t]) * D0]
        terms += [Y[b] * math.prod(X[b + 1:t]) for b in range(t)]
        out[t] = math.fsum(terms)
    return out


def xy_sequences(params: BoundParams, top: Topology, T: int, variant: str = "whfl"):
    g = geometry_for(variant, params, top)
    s = geometry_sums(g)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        X = np.array([x_of_t(params, t, I=g.I) for t in range(T)])
    if T and params.schedules.eta(0) > eta_limit(params):
        warnings.warn("learning rate exceeds the admissible range of the bound", stacklevel=2)
    Y = np.array([_y_from_sums(params, g, s, t, variant) for t in range(T)])
    return X, Y


def bound_trajectory(params: BoundParams, top: Topology, T: int,
                     variant: str = "whfl") -> np.ndarray:
    """Upper bounds on E||theta_PS(t) - theta*||^2 for t = 0..T."""
    if T < 0:
        raise ValueError("T must be >= 0")
    X, Y = xy_sequences(params, top, T, variant)
    return recursion(X, Y, params.D0)


def corollary1_loss_bound(trajectory, L: float) -> np.ndarray:
    return 0.5 * L * np.asarray(trajectory, dtype=float)


def corollary2_bound(params: BoundParams, T: int) -> float:
    """Closed form for I = tau = 1 with constant learning rate and user power."""
    if params.I != 1 or params.tau != 1:
        raise ValueError("closed form requires I = tau = 1")
    sch = params.schedules
    if sch.lr_slope != 0 or sch.p_slope != 0:
        raise ValueError("closed form requires constant learning rate and power")
    eta, P = sch.eta(0), sch.p_user(0)
    L, mu = params.L, params.mu
    q = mu * eta
    if not 0 < q < 1:
        raise ValueError(f"need 0 < mu*eta < 1, got {q}")
    floor = 2 * eta ** 2 * params.G2 + params.sigma_z2 * params.N / (
        params.K * params.M ** 3 * params.C ** 3 * params.sigma_h2 * P ** 2)
    decay = (1 - q) ** T
    return 0.5 * L * decay * params.D0 + L / (2 * q) * floor * (1 - decay)


def bound_table(params: BoundParams, top: Topology, T: int, loss: bool = True):
    """Rows (t, whfl, conventional, idealized); loss bounds when ``loss``."""
    cols = [bound_trajectory(params, top, T, v) for v in VARIANTS]
    if loss:
        cols = [corollary1_loss_bound(c, params.L) for c in cols]
    return np.column_stack([np.arange(T + 1)] + cols)
