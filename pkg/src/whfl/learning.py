"""Local training, data partitioning, error-free aggregation and the training loop."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import SystemConfig
from .numerics import RngStream, pack_complex
from .ota import cluster_ota_fast, conventional_ota_fast, global_ota_fast
from .schedules import Schedules
from .topology import Topology

PARTITION_SCHEMES = ("iid", "noniid_users", "noniid_clusters")

# ------------------------------------------------------------------ data


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (n, d) floats in [0, 1]
    labels: np.ndarray  # (n,) ints

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("image and label counts differ")

    def __len__(self):
        return self.labels.shape[0]


# ------------------------------------------------------------ objectives

class UserObjective:
    """Loss of one user.  ``gradient(theta, idx, gen)`` uses the samples ``idx``."""

    size: int

    def gradient(self, theta, idx, gen) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(eq=False)
class QuadraticUser(UserObjective):
    """f(theta) = kappa/2 * ||theta - a||^2, optionally with Gaussian gradient noise."""

    a: np.ndarray
    kappa: float = 1.0
    noise_std: float = 0.0
    size: int = 1

    def value(self, theta) -> float:
        return 0.5 * self.kappa * float(np.sum((theta - self.a) ** 2))

    def gradient(self, theta, idx=None, gen=None) -> np.ndarray:
        g = self.kappa * (theta - self.a)
        if self.noise_std > 0:
            g = g + self.noise_std * gen.standard_normal(g.shape)
        return g


@dataclass(eq=False)
class QuadraticTask:
    """Strongly convex quadratic with closed-form minimizer.

    The global objective is the size-weighted average of the user losses
    (equal sizes), so theta* = sum kappa_u a_u / sum kappa_u.
    """

    users: List[QuadraticUser]

    @classmethod
    def random(cls, n_users: int, dim: int, stream: RngStream, kappa_range=(1.0, 1.0),
               spread: float = 1.0, noise_std: float = 0.0) -> "QuadraticTask":
        gen = stream.generator()
        a = spread * gen.standard_normal((n_users, dim))
        kappa = gen.uniform(*kappa_range, size=n_users)
        return cls([QuadraticUser(a[u], float(kappa[u]), noise_std) for u in range(n_users)])

    @property
    def dim(self) -> int:
        return self.users[0].a.shape[0]

    @property
    def theta_star(self) -> np.ndarray:
        k = np.array([u.kappa for u in self.users])
        a = np.stack([u.a for u in self.users])
        return (k[:, None] * a).sum(axis=0) / k.sum()

    @property
    def L(self) -> float:
        return max(u.kappa for u in self.users)

    @property
    def mu(self) -> float:
        return min(u.kappa for u in self.users)

    def loss(self, theta) -> float:
        return math.fsum(u.value(theta) for u in self.users) / len(self.users)

    def gamma(self) -> float:
        """Dataset bias: F* minus the average of per-user minima (which are 0)."""
        return self.loss(self.theta_star)

    def init(self, gen) -> np.ndarray:
        return np.zeros(self.dim)

    def evaluate(self, theta):
        return self.loss(theta), float("nan")


def softmax_loss_grad(theta, X, y, n_classes: int = 10, grad: bool = True):
    """Mean cross-entropy of a single-layer softmax model and its gradient.

    ``theta`` = [W.ravel() (n_classes x d), b (n_classes)].
    """
    d = X.shape[1]
    W = theta[: n_classes * d].reshape(n_classes, d)
    b = theta[n_classes * d:]
    z = X @ W.T + b
    z -= z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = X.shape[0]
    loss = -float(np.mean(np.log(p[np.arange(n), y] + 1e-300)))
    if not grad:
        return loss, None
    p[np.arange(n), y] -= 1.0
    p /= n
    gW = p.T @ X
    gb = p.sum(axis=0)
    return loss, np.concatenate([gW.ravel(), gb])


@dataclass(eq=False)
class SoftmaxUser(UserObjective):
    data: Dataset
    indices: np.ndarray
    n_classes: int = 10

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])

    def gradient(self, theta, idx, gen=None) -> np.ndarray:
        rows = self.indices if idx is None else self.indices[idx]
        return softmax_loss_grad(theta, self.data.images[rows], self.data.labels[rows],
                                 self.n_classes)[1]


@dataclass(eq=False)
class SoftmaxTask:
    train: Dataset
    test: Dataset
    users: List[SoftmaxUser]
    n_classes: int = 10

    @property
    def dim(self) -> int:
        return self.n_classes * (self.train.images.shape[1] + 1)

    def init(self, gen) -> np.ndarray:
        return np.zeros(self.dim)

    def evaluate(self, theta):
        loss, _ = softmax_loss_grad(theta, self.train.images, self.train.labels,
                                    self.n_classes, grad=False)
        d = self.test.images.shape[1]
        W = theta[: self.n_classes * d].reshape(self.n_classes, d)
        b = theta[self.n_classes * d:]
        pred = np.argmax(self.test.images @ W.T + b, axis=1)
        return loss, float(np.mean(pred == self.test.labels))


def softmax_task(train: Dataset, test: Dataset, shards: Sequence[np.ndarray],
                 n_classes: int = 10) -> SoftmaxTask:
    return SoftmaxTask(train, test, [SoftmaxUser(train, np.asarray(s)) for s in shards],
                       n_classes)


# --------------------------------------------------------- local training

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim))


def _batches(size: int, batch: int, steps: int, gen):
    """Index batches drawn without replacement, reshuffled per pass."""
    if size <= 0:
        raise ValueError("empty dataset")
    if batch >= size:
        for _ in range(steps):
            yield None
        return
    perm = gen.permutation(size)
    pos = 0
    for _ in range(steps):
        if pos + batch > size:
            perm = gen.permutation(size)
            pos = 0
        yield perm[pos:pos + batch]
        pos += batch


def local_sgd(theta_start, objective: UserObjective, tau: int, eta: float, batch: int,
              stream: RngStream, optimizer: str = "sgd",
              adam_state: Optional[AdamState] = None) -> np.ndarray:
    """Run ``tau`` local steps; the Adam state, if given, is updated in place."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if not eta > 0:
        raise ValueError("eta must be positive")
    if objective.size <= 0:
        raise ValueError("empty dataset")
    theta = np.array(theta_start, dtype=float, copy=True)
    if tau == 0:
        return theta
    gen = stream.generator()
    if optimizer == "adam" and adam_state is None:
        adam_state = AdamState.zeros(theta.shape[0])
    for idx in _batches(objective.size, batch, tau, gen):
        g = objective.gradient(theta, idx, gen)
        if optimizer == "sgd":
            theta -= eta * g
        elif optimizer == "adam":
            s = adam_state
            s.step += 1
            s.m = s.beta1 * s.m + (1 - s.beta1) * g
            s.v = s.beta2 * s.v + (1 - s.beta2) * g * g
            m_hat = s.m / (1 - s.beta1 ** s.step)
            v_hat = s.v / (1 - s.beta2 ** s.step)
            theta -= eta * m_hat / (np.sqrt(v_hat) + s.eps)
        else:
            raise ValueError(f"unknown optimizer {optimizer!r}")
    return theta


def model_difference(theta_end, theta_ref) -> np.ndarray:
    theta_end = np.asarray(theta_end, dtype=float)
    theta_ref = np.asarray(theta_ref, dtype=float)
    if theta_end.shape != theta_ref.shape:
        raise ValueError(f"length mismatch: {theta_end.shape} vs {theta_ref.shape}")
    return theta_end - theta_ref


def ideal_cluster_step(theta_is, user_deltas) -> np.ndarray:
    """theta_IS + mean over users of their differences (last axis is the model)."""
    theta_is = np.asarray(theta_is, dtype=float)
    user_deltas = np.asarray(user_deltas, dtype=float)
    if user_deltas.shape[-1] != theta_is.shape[-1]:
        raise ValueError("length mismatch")
    return theta_is + user_deltas.mean(axis=-2)


def ideal_global_step(theta_ps, is_differences) -> np.ndarray:
    theta_ps = np.asarray(theta_ps, dtype=float)
    is_differences = np.asarray(is_differences, dtype=float)
    if is_differences.shape[-1] != theta_ps.shape[-1]:
        raise ValueError("length mismatch")
    return theta_ps + is_differences.mean(axis=-2)


def flat_global_step(theta_ps, deltas) -> np.ndarray:
    """theta_PS + (1/MC) sum over c, m, i of user differences; deltas (I, C, M, d)."""
    deltas = np.asarray(deltas, dtype=float)
    _, C, M, _ = deltas.shape
    return np.asarray(theta_ps, dtype=float) + deltas.sum(axis=(0, 1, 2)) / (M * C)


# ------------------------------------------------------------ partitions

@dataclass(frozen=True)
class PartitionSpec:
    scheme: str = "iid"
    groups_per_user: int = 3
    # cluster -> allowed labels (noniid_clusters); None uses the default map
    label_map: Optional[Sequence[Sequence[int]]] = None

    def __post_init__(self):
        if self.scheme not in PARTITION_SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}")


def default_label_map(C: int, n_labels: int = 10, shared: int = 6) -> List[List[int]]:
    """Labels 0..shared-1 everywhere plus one rotating private label per cluster.

    With 10 labels and 4 clusters every pair of clusters shares exactly 6 labels.
    """
    private = list(range(shared, n_labels))
    if not private:
        return [list(range(n_labels)) for _ in range(C)]
    return [list(range(shared)) + [private[c % len(private)]] for c in range(C)]


def partition(labels, spec: PartitionSpec, C: int, M: int, stream: RngStream):
    """Shard indices per user, as a list of C*M index arrays (user c*M + m)."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    U = C * M
    gen = stream.generator()
    if spec.scheme == "iid":
        if n < U:
            raise ValueError(f"dataset of {n} samples cannot fill {U} shards")
        return [np.sort(s) for s in np.array_split(gen.permutation(n), U)]
    if spec.scheme == "noniid_users":
        G = spec.groups_per_user * U
        if n < G:
            raise ValueError(f"dataset of {n} samples cannot form {G} groups")
        order = gen.permutation(n)
        order = order[np.argsort(labels[order], kind="stable")]
        groups = np.array_split(order, G)
        assign = gen.permutation(G).reshape(U, spec.groups_per_user)
        return [np.sort(np.concatenate([groups[g] for g in row])) for row in assign]
    # noniid_clusters
    lmap = spec.label_map if spec.label_map is not None else default_label_map(C)
    if len(lmap) != C:
        raise ValueError("label map must list one label set per cluster")
    per_cluster: List[List[np.ndarray]] = [[] for _ in range(C)]
    for lab in np.unique(labels):
        owners = [c for c in range(C) if lab in set(lmap[c])]
        if not owners:
            raise ValueError(f"label {lab} is not assigned to any cluster")
        idx = gen.permutation(np.flatnonzero(labels == lab))
        for c, part in zip(owners, np.array_split(idx, len(owners))):
            per_cluster[c].append(part)
    shards = []
    for c in range(C):
        pool = gen.permutation(np.concatenate(per_cluster[c])) if per_cluster[c] else np.array([], int)
        if pool.shape[0] < M:
            raise ValueError(f"cluster {c} has fewer samples than users")
        shards += [np.sort(s) for s in np.array_split(pool, M)]
    return shards


# -------------------------------------------------------------- training

TRACE_COLUMNS = ("t", "i", "normalized_time", "train_loss", "test_accuracy",
                 "avg_edge_power", "mode")


@dataclass
class MetricsTrace:
    mode: str
    rows: List[tuple] = field(default_factory=list)
    final_theta: Optional[np.ndarray] = None
    theta_history: List[np.ndarray] = field(default_factory=list)

    def append(self, t, i, norm_time, loss, acc, power):
        if self.rows and norm_time <= self.rows[-1][2]:
            raise ValueError("normalized time must increase")
        self.rows.append((t, i, norm_time, loss, acc, power, self.mode))

    def column(self, name: str) -> np.ndarray:
        j = TRACE_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows])

    def mean_edge_power(self) -> float:
        return float(np.mean(self.column("avg_edge_power"))) if self.rows else 0.0

    def __len__(self):
        return len(self.rows)


def edge_power(deltas, P_t: float) -> float:
    """Mean over users of P_t^2 * ||packed delta||^2 / N; deltas (..., 2N)."""
    x = pack_complex(deltas)
    N = x.shape[-1]
    return float(np.mean(P_t ** 2 * (np.abs(x) ** 2).sum(axis=-1) / N))


def run_whfl(cfg: SystemConfig, topology: Topology, objective, partition=None,
             stream: Optional[RngStream] = None, schedules: Optional[Schedules] = None,
             theta0=None, record_thetas: bool = False, bound_mu: Optional[float] = None,
             evaluate_every: int = 1,
             callback: Optional[Callable[[int, np.ndarray], None]] = None) -> MetricsTrace:
    """Train with the aggregation chosen by ``cfg.mode``.

    ``objective`` is a task with ``users`` (index c*M + m), ``init`` and
    ``evaluate``.  ``partition`` is accepted for bookkeeping (the task already
    holds the shards).  One row is recorded per cluster iteration; the model
    evaluated is the PS model after any update in that iteration.
    """
    del partition
    mode = cfg.mode
    C, M = topology.C, topology.M
    if len(objective.users) != C * M:
        raise ValueError(f"task has {len(objective.users)} users, topology needs {C * M}")
    if mode == "conventional" and cfg.I != 1:
        raise ValueError("conventional mode requires I = 1")
    if 2 * cfg.N != objective.dim:
        raise ValueError(f"config N={cfg.N} does not match model dimension {objective.dim}")
    stream = stream if stream is not None else RngStream(cfg.seed)
    sched = schedules if schedules is not None else Schedules.from_config(cfg)
    sched.check(cfg.T)
    if bound_mu is not None:
        limit = min(1.0, 1.0 / (bound_mu * cfg.tau * cfg.I))
        if any(sched.eta(t) > limit for t in range(cfg.T)):
            warnings.warn(f"learning rate exceeds {limit} required by the bound", stacklevel=2)

    theta_ps = np.array(theta0 if theta0 is not None else
                        objective.init(stream.child("init").generator()), dtype=float)
    trace = MetricsTrace(mode)
    adam = {u: AdamState.zeros(theta_ps.shape[0]) for u in range(C * M)} \
        if cfg.optimizer == "adam" else {}
    last_eval = None
    for t in range(cfg.T):
        eta, P_t, P_is = sched(t)
        theta_is = np.repeat(theta_ps[None, :], C, axis=0)
        for i in range(cfg.I):
            deltas = np.empty((C, M, theta_ps.shape[0]))
            for c in range(C):
                for m in range(M):
                    u = c * M + m
                    end = local_sgd(theta_is[c], objective.users[u], cfg.tau, eta,
                                    cfg.batch_size, stream.child("sgd", t, i, u),
                                    cfg.optimizer, adam.get(u))
                    deltas[c, m] = end - theta_is[c]
            power = edge_power(deltas, P_t)
            if mode == "ideal":
                theta_is = ideal_cluster_step(theta_is, deltas)
            elif mode == "ota":
                theta_is = theta_is + cluster_ota_fast(deltas, topology, cfg, P_t,
                                                       stream.child("cluster", t, i))
            else:
                theta_is = theta_is + conventional_ota_fast(
                    deltas, topology, cfg, P_t, stream.child("conventional", t))[None, :]
            updated = i == cfg.I - 1
            if updated:
                payload = theta_is - theta_ps
                if mode == "ideal":
                    theta_ps = ideal_global_step(theta_ps, payload)
                elif mode == "ota":
                    theta_ps = theta_ps + global_ota_fast(payload, topology, cfg, P_is,
                                                          stream.child("global", t))
                else:
                    theta_ps = theta_is[0].copy()
                if record_thetas:
                    trace.theta_history.append(theta_ps.copy())
                if callback is not None:
                    callback(t, theta_ps)
            norm_time = t * cfg.I + i + 1
            if last_eval is None or (updated and (norm_time % evaluate_every == 0
                                                  or t == cfg.T - 1)):
                last_eval = objective.evaluate(theta_ps)
            trace.append(t, i, norm_time, last_eval[0], last_eval[1], power)
    trace.final_theta = theta_ps
    return trace
