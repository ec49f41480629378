import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whfl.config import SystemConfig
from whfl.experiment import csv_text
from whfl.learning import (TRACE_COLUMNS, AdamState, Dataset, MetricsTrace, PartitionSpec, QuadraticTask,
                           QuadraticUser, default_label_map, edge_power, flat_global_step,
                           ideal_cluster_step, ideal_global_step, local_sgd, model_difference,
                           partition, run_whfl, softmax_loss_grad, softmax_task)
from whfl.numerics import RngStream
from whfl.topology import sample_topology, symmetric_topology


def _toy_data(n=300, d=6, k=10, seed=0):
    g = np.random.default_rng(seed)
    return Dataset(g.random((n, d)), g.integers(0, k, n))


def test_softmax_gradient_matches_finite_differences():
    data = _toy_data(40, 5, 3)
    g = np.random.default_rng(1)
    theta = 0.3 * g.standard_normal(3 * 6)
    _, grad = softmax_loss_grad(theta, data.images, data.labels % 3, 3)
    eps = 1e-6
    fd = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = eps
        fp = softmax_loss_grad(theta + e, data.images, data.labels % 3, 3, grad=False)[0]
        fm = softmax_loss_grad(theta - e, data.images, data.labels % 3, 3, grad=False)[0]
        fd[j] = (fp - fm) / (2 * eps)
    assert np.allclose(grad, fd, rtol=1e-6, atol=1e-8)


def test_softmax_layout_and_zero_model():
    data = _toy_data(20, 784)
    loss, grad = softmax_loss_grad(np.zeros(7850), data.images, data.labels)
    assert grad.shape == (7850,)
    assert loss == pytest.approx(np.log(10))


def test_local_sgd_zero_steps_is_identity():
    u = QuadraticUser(np.ones(4))
    th = np.arange(4.0)
    assert np.array_equal(local_sgd(th, u, 0, 0.1, 1, RngStream(0)), th)


def test_local_sgd_quadratic_step():
    u = QuadraticUser(np.ones(3), kappa=2.0)
    out = local_sgd(np.zeros(3), u, 2, 0.1, 1, RngStream(0))
    # theta <- theta - 0.1 * 2 (theta - 1), twice
    assert np.allclose(out, 1 - 0.8 ** 2)


def test_local_sgd_validation():
    u = QuadraticUser(np.ones(3))
    with pytest.raises(ValueError):
        local_sgd(np.zeros(3), u, 1, 0.0, 1, RngStream(0))
    with pytest.raises(ValueError):
        local_sgd(np.zeros(3), u, -1, 0.1, 1, RngStream(0))
    with pytest.raises(ValueError):
        local_sgd(np.zeros(3), u, 1, 0.1, 1, RngStream(0), optimizer="rmsprop")


def test_adam_state_persists_across_calls():
    u = QuadraticUser(np.ones(2))
    st_ = AdamState.zeros(2)
    th = local_sgd(np.zeros(2), u, 3, 0.01, 1, RngStream(0), "adam", st_)
    assert st_.step == 3
    local_sgd(th, u, 2, 0.01, 1, RngStream(1), "adam", st_)
    assert st_.step == 5
    # first Adam step moves every coordinate by about eta
    fresh = local_sgd(np.zeros(2), u, 1, 0.01, 1, RngStream(0), "adam")
    assert np.allclose(fresh, 0.01, rtol=1e-5)


def test_minibatches_cover_dataset_without_replacement():
    data = _toy_data(30)
    seen = []

    class Spy:
        size = 30

        def gradient(self, theta, idx, gen):
            seen.append(idx)
            return np.zeros_like(theta)

    local_sgd(np.zeros(2), Spy(), 3, 0.1, 10, RngStream(0))
    assert sorted(np.concatenate(seen).tolist()) == list(range(30))
    del data


def test_model_difference_and_ideal_steps():
    with pytest.raises(ValueError):
        model_difference(np.zeros(3), np.zeros(4))
    th = np.zeros((2, 4))
    d = np.arange(24.0).reshape(2, 3, 4)
    assert np.allclose(ideal_cluster_step(th, d), d.mean(axis=1))
    assert np.allclose(ideal_global_step(np.zeros(4), d[:, 0]), d[:, 0].mean(axis=0))
    dd = d[None]
    assert np.allclose(flat_global_step(np.zeros(4), dd), d.sum(axis=(0, 1)) / 6)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["iid", "noniid_users"]), st.integers(1, 4), st.integers(1, 4),
       st.integers(0, 1000))
def test_partitions_are_disjoint_covers(scheme, C, M, seed):
    labels = np.random.default_rng(seed).integers(0, 10, 600)
    shards = partition(labels, PartitionSpec(scheme), C, M, RngStream(seed))
    assert len(shards) == C * M
    allidx = np.concatenate(shards)
    assert sorted(allidx.tolist()) == list(range(600))
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= (1 if scheme == "iid" else 3)


def test_noniid_users_limits_labels_per_user():
    labels = np.repeat(np.arange(10), 60)
    shards = partition(labels, PartitionSpec("noniid_users"), 4, 5, RngStream(0))
    for s in shards:
        assert len(np.unique(labels[s])) <= 6


def test_noniid_clusters_respects_label_map():
    labels = np.repeat(np.arange(10), 50)
    shards = partition(labels, PartitionSpec("noniid_clusters"), 4, 5, RngStream(0))
    lmap = default_label_map(4)
    for c in range(4):
        got = set(np.unique(labels[np.concatenate(shards[c * 5:(c + 1) * 5])]).tolist())
        assert got <= set(lmap[c])
    assert sorted(np.concatenate(shards).tolist()) == list(range(500))


def test_partition_errors():
    with pytest.raises(ValueError):
        partition(np.zeros(3, int), PartitionSpec("iid"), 2, 2, RngStream(0))
    with pytest.raises(ValueError):
        PartitionSpec("bogus")
    with pytest.raises(ValueError):
        partition(np.arange(10), PartitionSpec("noniid_clusters", label_map=[[0]]), 2, 2,
                  RngStream(0))


def test_edge_power():
    d = np.ones((2, 3, 8))
    assert edge_power(d, 2.0) == pytest.approx(4.0 * 8 / 4)


def _quad_run(mode, **kw):
    cfg = SystemConfig(C=2, M=2, K=8, K_ps=8, N=4, T=6, I=2, optimizer="sgd", lr0=0.1,
                       batch_size=1, sigma_z2=0.5, **kw).for_mode(mode)
    top = sample_topology(cfg, RngStream(0, ("topology",)))
    task = QuadraticTask.random(4, 8, RngStream(1))
    return cfg, run_whfl(cfg, top, task, stream=RngStream(3))


@pytest.mark.parametrize("mode", ["ota", "ideal", "conventional"])
def test_trace_rows(mode):
    cfg, tr = _quad_run(mode)
    assert len(tr) == 12
    nt = tr.column("normalized_time")
    assert np.all(np.diff(nt) > 0) and nt[-1] == 12
    assert all(r[-1] == mode for r in tr.rows)
    assert np.all(tr.column("avg_edge_power") >= 0)


def test_run_is_deterministic():
    _, a = _quad_run("ota")
    _, b = _quad_run("ota")
    assert csv_text(TRACE_COLUMNS, a.rows) == csv_text(TRACE_COLUMNS, b.rows)
    assert np.array_equal(a.final_theta, b.final_theta)


def test_ideal_quadratic_converges():
    cfg = SystemConfig(C=2, M=2, N=3, T=200, I=1, tau=1, optimizer="sgd", lr0=0.1,
                       sigma_z2=0.0, mode="ideal")
    task = QuadraticTask.random(4, 6, RngStream(2), kappa_range=(0.5, 2.0))
    tr = run_whfl(cfg, symmetric_topology(2, 2), task)
    assert np.sum((tr.final_theta - task.theta_star) ** 2) < 1e-10


def test_run_validation():
    cfg = SystemConfig(C=2, M=2, N=4, T=1, optimizer="sgd")
    task = QuadraticTask.random(3, 8, RngStream(0))
    with pytest.raises(ValueError):
        run_whfl(cfg, symmetric_topology(2, 2), task)
    task = QuadraticTask.random(4, 6, RngStream(0))
    with pytest.raises(ValueError):
        run_whfl(cfg, symmetric_topology(2, 2), task)


def test_bound_range_warning():
    cfg = SystemConfig(C=2, M=2, N=3, T=2, optimizer="sgd", lr0=0.5, mode="ideal")
    task = QuadraticTask.random(4, 6, RngStream(0))
    with pytest.warns(UserWarning):
        run_whfl(cfg, symmetric_topology(2, 2), task, bound_mu=4.0)


def test_metrics_trace_rejects_non_increasing_time():
    tr = MetricsTrace("ota")
    tr.append(0, 0, 1, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        tr.append(0, 0, 1, 0.0, 0.0, 0.0)


def test_softmax_task_evaluate():
    tr, te = _toy_data(100, 4), _toy_data(50, 4, seed=1)
    task = softmax_task(tr, te, np.array_split(np.arange(100), 4))
    loss, acc = task.evaluate(np.zeros(task.dim))
    assert loss == pytest.approx(np.log(10)) and 0 <= acc <= 1
