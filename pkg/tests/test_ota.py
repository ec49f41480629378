import numpy as np
import pytest

from whfl.channel import (draw_cluster_channels, draw_conventional_channels,
                          draw_global_channels)
from whfl.config import SystemConfig
from whfl.numerics import RngStream, pack_complex
from whfl.ota import (cluster_descale, cluster_ota_fast, cluster_ota_round, cluster_weights,
                      conventional_ota_fast, conventional_ota_round, decompose_ps_terms,
                      global_ota_fast, global_ota_round, global_weights, is_transmit_payload)
from whfl.topology import symmetric_topology


def _deltas(cfg, seed=0, lead=()):
    g = np.random.default_rng(seed)
    return g.standard_normal(lead + (cfg.C, cfg.M, 2 * cfg.N))


@pytest.mark.parametrize("norm", ["weighted", "literal"])
def test_nine_terms_sum_to_forward_pass(tiny_cfg, topo, norm):
    cfg = tiny_cfg.replace(normalization=norm)
    top = topo(cfg)
    D = _deltas(cfg, lead=(cfg.I,))
    for trial in range(20):
        s = RngStream(trial)
        draws = [draw_cluster_channels(top, cfg, s.child("cluster", i)) for i in range(cfg.I)]
        ests = [cluster_ota_round(D[i], top, cfg, 1.5, draws[i], decompose=False)[0]
                for i in range(cfg.I)]
        gd = draw_global_channels(top, cfg, s.child("global"))
        est, dec = global_ota_round(is_transmit_payload(ests), top, cfg, 7.0, gd,
                                    user_deltas=D, cluster_draws=draws, P_t=1.5)
        total = dec.terms.sum(axis=-2)
        assert np.allclose(total, dec.total, rtol=1e-12, atol=1e-14)
        assert np.allclose(pack_complex(est), dec.descale * dec.total, rtol=1e-12)


def test_cluster_parts_sum_to_total(small_cfg, topo):
    top = topo(small_cfg)
    d = draw_cluster_channels(top, small_cfg, RngStream(2), batch=3)
    _, dec = cluster_ota_round(_deltas(small_cfg), top, small_cfg, 2.0, d)
    assert np.allclose(sum(dec.parts()), dec.total, rtol=1e-12)


def test_fast_paths_match_materialized(small_cfg, topo):
    top = topo(small_cfg)
    D = _deltas(small_cfg)
    s = RngStream(5)
    ref, _ = cluster_ota_round(D, top, small_cfg, 1.2, draw_cluster_channels(top, small_cfg, s),
                               decompose=False)
    assert np.allclose(cluster_ota_fast(D, top, small_cfg, 1.2, s), ref, rtol=1e-11, atol=1e-12)
    pay = D[:, 0]
    ref, _ = global_ota_round(pay, top, small_cfg, 9.0, draw_global_channels(top, small_cfg, s))
    assert np.allclose(global_ota_fast(pay, top, small_cfg, 9.0, s), ref, rtol=1e-11, atol=1e-12)
    ref, _ = conventional_ota_round(D, top, small_cfg, 1.2,
                                    draw_conventional_channels(top, small_cfg, s))
    assert np.allclose(conventional_ota_fast(D, top, small_cfg, 1.2, s), ref,
                       rtol=1e-11, atol=1e-12)


def test_noiseless_single_antenna_free_limit(topo):
    # with many antennas and no noise the estimate concentrates on the weighted mean
    cfg = SystemConfig(C=2, M=3, K=4000, K_ps=4000, N=2, sigma_z2=0.0)
    top = topo(cfg)
    D = _deltas(cfg, 3)
    est = cluster_ota_fast(D, top, cfg, 1.0, RngStream(0))
    target = np.einsum("cm,cmn->cn", cluster_weights(top), D)
    assert np.allclose(est, target, atol=0.15)
    pay = D[:, 0]
    est = global_ota_fast(pay, top, cfg, 1.0, RngStream(1))
    assert np.allclose(est, global_weights(top) @ pay, atol=0.1)


def test_weights_sum_to_one(topo):
    top = topo(SystemConfig(C=3, M=4))
    assert np.allclose(cluster_weights(top).sum(axis=1), 1.0)
    assert np.isclose(global_weights(top).sum(), 1.0)


def test_symmetric_weights_are_uniform():
    top = symmetric_topology(3, 4)
    assert np.allclose(cluster_weights(top), 0.25)
    assert np.allclose(global_weights(top), 1 / 3)


def test_literal_normalization_rescales_by_M(small_cfg, topo):
    top = topo(small_cfg)
    a = cluster_descale(top, small_cfg, 2.0)
    b = cluster_descale(top, small_cfg.replace(normalization="literal"), 2.0)
    assert np.allclose(a / b, small_cfg.M)


def test_invalid_inputs(small_cfg, topo):
    top = topo(small_cfg)
    with pytest.raises(ValueError):
        cluster_ota_fast(np.zeros((2, 2, 15)), top, small_cfg, 1.0, RngStream(0))
    with pytest.raises(ValueError):
        cluster_ota_fast(_deltas(small_cfg), top, small_cfg, 0.0, RngStream(0))
    with pytest.raises(ValueError):
        global_ota_fast(_deltas(small_cfg)[:, 0], top, small_cfg, -1.0, RngStream(0))
    draws = [draw_cluster_channels(top, small_cfg, RngStream(0))]
    gd = draw_global_channels(top, small_cfg, RngStream(1))
    with pytest.raises(ValueError):
        decompose_ps_terms(_deltas(small_cfg, lead=(2,)), draws, gd, top, small_cfg, 1.0, 1.0)
