"""Monte Carlo checks of the channel-expectation identities behind the bound.

Model differences are held fixed so the fading and noise are the only
randomness.  For each of the nine PS terms we compare the empirical mean of
``sum_n (descaled term_n)^2`` (term 1 is taken relative to the error-free
aggregate) against two analytical values:

* ``lemma_rhs``: the exact expectation for the fixed deltas, derived from
  complex Gaussian moments for the configured normalization;
* ``literal_moment_line``: the corresponding closed-form expression transcribed
  literally (only meaningful with the ``literal`` normalization).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np

from .channel import draw_cluster_channels, draw_global_channels
from .config import SystemConfig
from .numerics import RngStream, pack_complex, unpack_complex
from .ota import (
    PS_TERM_COUNT,
    cluster_descale,
    cluster_ota_round,
    cluster_weights,
    decompose_ps_terms,
    global_descale,
    global_ota_round,
    global_weights,
    is_transmit_payload,
)
from .topology import Topology

CLUSTER_TERMS = ("cluster_signal", "cluster_intra", "cluster_inter", "cluster_noise")
LOW_CONFIDENCE_TRIALS = 1000
Z_THRESHOLD = 3.0

TermId = Union[int, str]


@dataclass
class LemmaCheckSpec:
    term_id: TermId
    fixed_deltas: np.ndarray  # (I, C, M, 2N)
    trials: int
    config: SystemConfig
    topology: Topology
    P_t: float = 1.0
    P_IS: float = 10.0
    seed: int = 0
    block: int = 2000

    def __post_init__(self):
        self.fixed_deltas = np.asarray(self.fixed_deltas, dtype=float)
        cfg, top = self.config, self.topology
        if self.fixed_deltas.shape != (cfg.I, top.C, top.M, 2 * cfg.N):
            raise ValueError("fixed_deltas must have shape (I, C, M, 2N)")
        if not np.all(np.isfinite(self.fixed_deltas)):
            raise ValueError("fixed_deltas must be finite")
        if self.trials < 2:
            raise ValueError("need at least two trials for a standard error")
        _term_index(self.term_id)


def _term_index(term_id: TermId):
    if isinstance(term_id, str) and term_id in CLUSTER_TERMS:
        return term_id
    try:
        l = int(term_id)
    except (TypeError, ValueError):
        raise ValueError(f"unknown term_id {term_id!r}") from None
    if not 1 <= l <= PS_TERM_COUNT:
        raise ValueError(f"unknown term_id {term_id!r}")
    return l


def error_free_aggregate(deltas: np.ndarray) -> np.ndarray:
    """(1/MC) * sum over c, m, i of the user deltas."""
    I, C, M, _ = deltas.shape
    return deltas.sum(axis=(0, 1, 2)) / (M * C)


# ------------------------------------------------------------ simulation

@dataclass
class _Moments:
    total: np.ndarray
    total_sq: np.ndarray
    n: int = 0

    def add(self, values: np.ndarray):
        # values (B, terms)
        self.total = self.total + values.sum(axis=0)
        self.total_sq = self.total_sq + (values ** 2).sum(axis=0)
        self.n += values.shape[0]

    def mean_stderr(self):
        mean = self.total / self.n
        var = np.maximum(self.total_sq / self.n - mean ** 2, 0.0) * self.n / (self.n - 1)
        return mean, np.sqrt(var / self.n)


def _block_sizes(trials: int, block: int):
    full, rest = divmod(trials, block)
    return [block] * full + ([rest] if rest else [])


def mc_all_moments(spec: LemmaCheckSpec) -> Dict[TermId, tuple]:
    """Empirical (mean, stderr) for all nine PS terms and the four cluster terms.

    Every term of a trial comes from the same draw (common random numbers).
    Blocks are reduced in order, so results do not depend on scheduling.
    """
    cfg, top = spec.config, spec.topology
    D = spec.fixed_deltas
    target = error_free_aggregate(D)
    d_c = cluster_descale(top, cfg, spec.P_t)[:, None]
    root = RngStream(spec.seed, ("mc",))
    acc = _Moments(np.zeros(PS_TERM_COUNT + 4), np.zeros(PS_TERM_COUNT + 4))
    for b, size in enumerate(_block_sizes(spec.trials, spec.block)):
        blk = root.child(b)
        cds = [draw_cluster_channels(top, cfg, blk.child("cluster", i), batch=size)
               for i in range(cfg.I)]
        gd = draw_global_channels(top, cfg, blk.child("global"), batch=size)
        dec = decompose_ps_terms(D, cds, gd, top, cfg, spec.P_t, spec.P_IS)
        terms = dec.descaled_terms()  # (B, 9, 2N)
        terms[:, 0, :] -= target
        ps_vals = (terms ** 2).sum(axis=-1)
        cl = [0.0] * 4
        for i in range(cfg.I):
            _, cdec = cluster_ota_round(D[i], top, cfg, spec.P_t, cds[i])
            for j, part in enumerate(cdec.parts()):
                cl[j] = cl[j] + d_c * part
        cl_vals = np.stack([(np.abs(p) ** 2).sum(axis=(-2, -1)) for p in cl], axis=-1)
        acc.add(np.concatenate([ps_vals, cl_vals], axis=-1))
    mean, se = acc.mean_stderr()
    out = {l: (float(mean[l - 1]), float(se[l - 1])) for l in range(1, PS_TERM_COUNT + 1)}
    for j, name in enumerate(CLUSTER_TERMS):
        out[name] = (float(mean[PS_TERM_COUNT + j]), float(se[PS_TERM_COUNT + j]))
    return out


def mc_second_moment(spec: LemmaCheckSpec):
    """(empirical mean of sum_n value^2, standard error) for ``spec.term_id``."""
    return mc_all_moments(spec)[_term_index(spec.term_id)]


# ------------------------------------------------------ exact expectations

def _symbol_stats(deltas, top: Topology, cfg: SystemConfig):
    """Per-symbol first and second moments of the combined cluster parts.

    Returns dict of arrays over (C, N): EU (complex mean of the signal sum),
    VU (its variance), EV2, EW2, ER2.  Sums run over i and k, unscaled.
    """
    x = pack_complex(deltas)  # (I, C, M, N)
    K, s2 = cfg.K, cfg.sigma_h2
    B = top.beta * s2  # (C_tx, M, C_rx)
    C = top.C
    cidx = np.arange(C)
    Bo = B[cidx, :, cidx]  # (C, M) own variances
    ax2 = np.abs(x) ** 2
    EU = K * np.einsum("cm,icmn->cn", Bo, x)
    VU = K * np.einsum("cm,icmn->cn", Bo ** 2, ax2)
    rest = Bo.sum(axis=1, keepdims=True) - Bo  # sum over m != m'
    EV2 = K * np.einsum("cm,cm,icmn->cn", Bo, rest, ax2)
    off_c = 1.0 - np.eye(C)
    # sum over c' != c, m' of B[c', m', c] |x_{c', m'}|^2
    leak = np.einsum("dmc,dc,idmn->cn", B, off_c, ax2)
    EW2 = K * Bo.sum(axis=1)[:, None] * leak
    ER2 = cfg.I * K * Bo.sum(axis=1) * cfg.sigma_z2  # (C,)
    return EU, VU, EV2, EW2, np.broadcast_to(ER2[:, None], EU.shape)


def lemma_rhs(term_id: TermId, fixed_deltas, config: SystemConfig, topology: Topology,
              P_t: float = 1.0, P_IS: float = 10.0) -> float:
    """Exact expectation of ``sum_n (descaled term_n)^2`` for fixed deltas."""
    l = _term_index(term_id)
    cfg, top = config, topology
    D = np.asarray(fixed_deltas, dtype=float)
    K, Kp, s2 = cfg.K, cfg.K_ps, cfg.sigma_h2
    EU, VU, EV2, EW2, ER2 = _symbol_stats(D, top, cfg)
    EU2 = np.abs(EU) ** 2 + VU
    d_c = cluster_descale(top, cfg, P_t)  # (C,)

    if isinstance(l, str):
        g = (d_c ** 2)[:, None]
        val = {
            "cluster_signal": g * (P_t / K) ** 2 * EU2,
            "cluster_intra": g * (P_t / K) ** 2 * EV2,
            "cluster_inter": g * (P_t / K) ** 2 * EW2,
            "cluster_noise": g * (1.0 / K) ** 2 * ER2,
        }[l]
        return math.fsum(val.ravel())

    Dg = global_descale(top, cfg, P_IS)
    A = top.beta_is * s2  # (C,)
    C = top.C
    e = Dg * (P_IS / Kp) * d_c * (P_t / K)  # (C,)
    en = e / P_t
    ES = Kp * A
    ES2 = Kp * (Kp + 1) * A ** 2
    ET2 = Kp * A * (A.sum() - A)  # E|T_c'|^2

    if l == 1:
        target = pack_complex(error_free_aggregate(D))  # (N,)
        w = (e * ES)[:, None] * EU  # per-cluster mean contribution
        mean = w.sum(axis=0)
        second = (e ** 2 * ES2)[:, None] * EU2
        second = second.sum(axis=0) + (np.abs(mean) ** 2 - (np.abs(w) ** 2).sum(axis=0))
        val = second - 2 * (mean * target.conj()).real + np.abs(target) ** 2
    elif l in (2, 3, 4):
        mom = {2: EV2, 3: EW2, 4: ER2}[l]
        coef = (en if l == 4 else e) ** 2 * ES2
        val = coef[:, None] * mom
    elif l in (5, 6, 7, 8):
        mom = {5: EU2, 6: EV2, 7: EW2, 8: ER2}[l]
        coef = (en if l == 8 else e) ** 2 * ET2
        val = coef[:, None] * mom
    else:
        val = np.full(cfg.N, Dg ** 2 * cfg.sigma_z2 * A.sum() / Kp)
    return math.fsum(np.asarray(val).real.ravel())


# ------------------------------------------- literal closed-form lines

def a_coeff_literal(top: Topology, cfg: SystemConfig) -> np.ndarray:
    """A(m1, m2, c1, c2) as an array indexed [c1, m1, c2, m2]."""
    from .bound import a_matrix
    return a_matrix(top, cfg.K, cfg.K_ps, cfg.I)


def literal_moment_line(term_id: TermId, fixed_deltas, config: SystemConfig,
                     topology: Topology, P_t: float = 1.0, P_IS: float = 10.0) -> float:
    """Literal closed-form line for one PS term with the fixed deltas substituted.

    Transcribed verbatim (including index conventions); written for the
    ``literal`` normalization.  Cluster terms have no literal counterpart.
    """
    l = _term_index(term_id)
    if isinstance(l, str):
        return float("nan")
    cfg, top = config, topology
    D = np.asarray(fixed_deltas, dtype=float)  # (I, C, M, 2N)
    I, C, M, twoN = D.shape
    N = twoN // 2
    K, Kp, s2, sz2 = cfg.K, cfg.K_ps, cfg.sigma_h2, cfg.sigma_z2
    b = top.beta  # [c_tx, m, c_rx]
    bis = top.beta_is
    bbar_c = top.own_beta().sum(axis=1)
    bbar = bis.sum()
    bo = top.own_beta()
    sq = (D ** 2).sum(axis=-1)  # (I, C, M) squared norms
    sq_i = sq.sum(axis=0)  # (C, M)
    S = D.sum(axis=0)  # (C, M, 2N) sum over i
    gram = np.einsum("cmn,dpn->cmdp", S, S)
    terms = []
    if l == 1:
        A = a_coeff_literal(top, cfg)
        terms = [(A * gram).sum() / (M ** 2 * C ** 2)]
    elif l == 2:
        pre = (Kp + 1) / (K * Kp * M ** 2 * C ** 2 * bbar ** 2)
        for c in range(C):
            for m in range(M):
                for mp in range(M):
                    if mp != m:
                        terms.append(pre * bis[c] ** 2 * bo[c, m] * bo[c, mp]
                                     / bbar_c[c] ** 2 * sq_i[c, mp])
    elif l == 3:
        pre = (Kp + 1) / (K * Kp * M ** 2 * C ** 2 * bbar ** 2)
        for c in range(C):
            for cp in range(C):
                if cp == c:
                    continue
                for m in range(M):
                    for mp in range(M):
                        terms.append(pre * bis[c] ** 2 * bo[c, m] * b[c, mp, cp]
                                     / bbar_c[c] ** 2 * sq_i[cp, mp])
    elif l == 4:
        pre = (Kp + 1) * I * sz2 * N / (K * Kp * M ** 2 * C ** 2 * P_t ** 2 * s2 * bbar ** 2)
        terms = [pre * bis[c] ** 2 * bo[c, m] / bbar_c[c] ** 2
                 for c in range(C) for m in range(M)]
    elif l == 5:
        if C > 1:
            pre = (2 + (M - 1) * (C - 2) * (K - 1) * (I - 1)) / (
                2 * K * Kp * M ** 3 * C ** 2 * (C - 1) * I * bbar ** 2)
            for c in range(C):
                for cp in range(C):
                    if cp == c:
                        continue
                    for m1 in range(M):
                        for m2 in range(M):
                            terms.append(pre * bis[c] * bis[cp] * bo[cp, m1] * bo[cp, m2]
                                         / bbar_c[cp] ** 2 * gram[cp, m1, cp, m2])
    elif l == 6:
        pre = 1.0 / (K * Kp * M ** 2 * C ** 2 * bbar ** 2)
        for c in range(C):
            for cp in range(C):
                if cp == c:
                    continue
                for m in range(M):
                    for mp in range(M):
                        if mp != m:
                            terms.append(pre * bis[c] * bis[cp] * bo[cp, m] * bo[cp, mp]
                                         / bbar_c[cp] ** 2 * sq_i[cp, mp])
    elif l == 7:
        pre = 1.0 / (K * Kp * M ** 2 * C ** 2 * bbar ** 2)
        for c in range(C):
            for cp in range(C):
                if cp == c:
                    continue
                for cpp in range(C):
                    if cpp == cp:
                        continue
                    for m in range(M):
                        for mp in range(M):
                            terms.append(pre * bis[c] * bis[cp] * bo[cp, m] * b[cp, mp, cpp]
                                         / bbar_c[cp] ** 2 * sq_i[cpp, mp])
    elif l == 8:
        pre = sz2 * I * N / (P_IS ** 2 * K * Kp * M ** 2 * C ** 2 * s2 * bbar ** 2)
        terms = [pre * bis[c] * bis[cp] * bo[cp, m] / bbar_c[cp] ** 2
                 for c in range(C) for cp in range(C) if cp != c for m in range(M)]
    else:
        terms = [sz2 * N / (P_IS ** 2 * Kp * C ** 2 * s2 * bbar ** 2) * bis.sum()]
    return math.fsum(terms)


# ------------------------------------------------------------- reports

@dataclass
class TermResult:
    term: str
    empirical: float
    analytical: float
    stderr: float
    z_score: float
    passed: bool
    literal_value: Optional[float] = None
    literal_z_score: Optional[float] = None
    low_confidence: bool = False

    def to_dict(self) -> dict:
        d = {
            "term": self.term,
            "empirical": self.empirical,
            "analytical": self.analytical,
            "stderr": self.stderr,
            "z_score": self.z_score,
            "pass": self.passed,
            "low_confidence": self.low_confidence,
        }
        if self.literal_value is not None:
            d["literal_value"] = self.literal_value
            d["literal_z_score"] = self.literal_z_score
        return d


def _z(emp, ana, se):
    if se == 0.0:
        return 0.0 if emp == ana else math.inf
    return (emp - ana) / se


def _finite(v):
    return None if v is None or not math.isfinite(v) else v


def run_lemma_suite(fixed_deltas, config: SystemConfig, topology: Topology, trials: int,
                    P_t: float = 1.0, P_IS: float = 10.0, seed: int = 0,
                    include_cluster: bool = True) -> List[TermResult]:
    """Check every PS term (and optionally the cluster terms) against lemma_rhs."""
    spec = LemmaCheckSpec(1, fixed_deltas, trials, config, topology, P_t, P_IS, seed)
    moments = mc_all_moments(spec)
    ids: List[TermId] = list(range(1, PS_TERM_COUNT + 1))
    if include_cluster:
        ids += list(CLUSTER_TERMS)
    low = trials < LOW_CONFIDENCE_TRIALS
    out = []
    for t in ids:
        emp, se = moments[t]
        ana = lemma_rhs(t, fixed_deltas, config, topology, P_t, P_IS)
        z = _z(emp, ana, se)
        pv = _finite(literal_moment_line(t, fixed_deltas, config, topology, P_t, P_IS))
        pz = None if pv is None else _z(emp, pv, se)
        name = f"ps_term_{t}" if isinstance(t, int) else t
        out.append(TermResult(name, emp, ana, se, z, abs(z) <= Z_THRESHOLD,
                              pv, pz, low))
    return out


@dataclass
class UnbiasednessReport:
    hop: str
    empirical_mean: np.ndarray
    expected_mean: np.ndarray
    stderr: np.ndarray
    max_abs_z: float
    passed: bool
    zero_mean_terms: Dict[str, float] = field(default_factory=dict)  # term -> max |z|

    def to_dict(self) -> dict:
        return {
            "hop": self.hop,
            "max_abs_z": self.max_abs_z,
            "pass": self.passed,
            "zero_mean_terms": dict(self.zero_mean_terms),
        }


def _max_abs_z(mean, expected, se):
    se = np.asarray(se)
    diff = np.abs(np.asarray(mean) - np.asarray(expected))
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
    return float(z.max()) if z.size else 0.0


def _mean_se(samples):
    samples = np.asarray(samples)
    n = samples.shape[0]
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(n)


def check_unbiasedness(hop: str, fixed_deltas, config: SystemConfig, topology: Topology,
                       trials: int, P: float = 1.0, seed: int = 0, block: int = 2000,
                       z_threshold: float = Z_THRESHOLD) -> UnbiasednessReport:
    """Empirical mean of one hop's estimator against its beta-weighted target.

    ``cluster``: fixed_deltas (C, M, 2N), target sum_m w_cm delta_cm per cluster.
    ``global``: fixed_deltas are payloads (C, 2N), target sum_c w_c payload_c.
    With the ``literal`` normalization the targets carry the extra 1/M or 1/C.
    """
    cfg, top = config, topology
    D = np.asarray(fixed_deltas, dtype=float)
    root = RngStream(seed, ("unbiased", hop))
    est_samples, parts = [], {}
    for b, size in enumerate(_block_sizes(trials, block)):
        stream = root.child(b)
        if hop == "cluster":
            draw = draw_cluster_channels(top, cfg, stream, batch=size)
            est, dec = cluster_ota_round(D, top, cfg, P, draw)
            d_c = cluster_descale(top, cfg, P)[:, None]
            named = {"intra_interference": dec.intra_interference,
                     "inter_interference": dec.inter_interference,
                     "noise": dec.noise}
            for k, v in named.items():
                parts.setdefault(k, []).append(unpack_complex(d_c * v).reshape(size, -1))
        elif hop == "global":
            draw = draw_global_channels(top, cfg, stream, batch=size)
            est, _ = global_ota_round(D, top, cfg, P, draw)
            a, z = draw.h_ps, draw.z_ps
            Kp = a.shape[-2]
            sa_conj = a.sum(axis=-3).conj()
            x = pack_complex(D)
            # interference: conj(sum a) * a_c' x_c' minus own terms; noise separately
            full = P * np.einsum("bkn,bckn,cn->bn", sa_conj, a, x) / Kp
            own = P * np.einsum("bckn,cn->bn", (a * a.conj()).real, x) / Kp
            noise = (sa_conj * z).sum(axis=-2) / Kp
            Dg = global_descale(top, cfg, P)
            parts.setdefault("interference", []).append(unpack_complex(Dg * (full - own)))
            parts.setdefault("noise", []).append(unpack_complex(Dg * noise))
        else:
            raise ValueError(f"hop must be 'cluster' or 'global', got {hop!r}")
        est_samples.append(est.reshape(size, -1))
    est_samples = np.concatenate(est_samples)
    if hop == "cluster":
        w = cluster_weights(top)
        expected = np.einsum("cm,cmn->cn", w, D)
        if cfg.normalization == "literal":
            expected = expected / top.M
    else:
        expected = np.einsum("c,cn->n", global_weights(top), D)
        if cfg.normalization == "literal":
            expected = expected / top.C
    mean, se = _mean_se(est_samples)
    expected = expected.reshape(-1)
    zmax = _max_abs_z(mean, expected, se)
    zero_terms = {}
    for k, v in parts.items():
        m, s = _mean_se(np.concatenate(v))
        zero_terms[k] = _max_abs_z(m, 0.0, s)
    passed = zmax <= _bonferroni(z_threshold, expected.size) and all(
        zt <= _bonferroni(z_threshold, expected.size) for zt in zero_terms.values())
    return UnbiasednessReport(hop, mean, expected, se, zmax, passed, zero_terms)


def _bonferroni(z: float, count: int) -> float:
    """Per-entry threshold keeping the family-wise level of a single z-test."""
    if count <= 1:
        return z
    from statistics import NormalDist
    nd = NormalDist()
    alpha = 2 * (1 - nd.cdf(z))
    return nd.inv_cdf(1 - alpha / (2 * count))


def check_zero_inner_product(fixed_deltas, config: SystemConfig, topology: Topology,
                             trials: int, theta_ps, theta_star, P_t: float = 1.0,
                             P_IS: float = 10.0, seed: int = 0, block: int = 2000):
    """Mean of <est - target, theta_ps + target - theta_star> with its standard error.

    Returns (mean, stderr, z).  The mean is zero exactly when the global
    estimator is unbiased for the error-free aggregate.
    """
    cfg, top = config, topology
    D = np.asarray(fixed_deltas, dtype=float)
    target = error_free_aggregate(D)
    v = np.asarray(theta_ps, dtype=float) + target - np.asarray(theta_star, dtype=float)
    root = RngStream(seed, ("inner",))
    vals = []
    for b, size in enumerate(_block_sizes(trials, block)):
        blk = root.child(b)
        ests = []
        for i in range(cfg.I):
            draw = draw_cluster_channels(top, cfg, blk.child("cluster", i), batch=size)
            e, _ = cluster_ota_round(D[i], top, cfg, P_t, draw, decompose=False)
            ests.append(e)
        pay = is_transmit_payload(ests)
        gd = draw_global_channels(top, cfg, blk.child("global"), batch=size)
        est, _ = global_ota_round(pay, top, cfg, P_IS, gd)
        vals.append((est - target) @ v)
    m, s = _mean_se(np.concatenate(vals))
    return float(m), float(s), _z(float(m), 0.0, float(s))
