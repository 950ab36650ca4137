"""Synthetic federated fine-tuning task.

The model is a linear map ``W`` (``p x C``) composed additively from a frozen
foundation ``W0`` and a per-module adapter ``dW``. Two losses are available:

* ``logistic``: softmax cross-entropy plus ridge, ``eps = R^2 / 2 + mu_r``;
* ``quadratic``: multi-output least squares plus ridge, ``eps = R^2 + mu_r``.

Both are ``mu_r``-strongly convex in the full parameter. Adapters are either
direct (``rank=None``) or LoRA factors ``dW = B @ A`` with ``B`` started at zero.
Parameters are flattened row-major, so vector index ``i * C + c`` is ``W[i, c]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

__all__ = [
    "DataShard",
    "SyntheticTask",
    "LoraAdapter",
    "ReferenceError",
    "make_task",
    "partition_dirichlet",
    "sample_batch",
    "local_gradient",
    "aggregate",
    "ensemble_risk",
    "measured_phi",
    "solve_reference",
    "save_task",
    "load_task",
]

MODES = ("logistic", "quadratic")
REF_GRAD_TOL = 1e-9


class ReferenceError(RuntimeError):
    """A reference minimisation failed to reach its gradient tolerance."""


@dataclass
class DataShard:
    X: np.ndarray
    Y: np.ndarray

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "DataShard":
        return DataShard(self.X[idx], self.Y[idx])


@dataclass
class SyntheticTask:
    """Per-UE training and test shards plus the frozen foundation.

    Attributes
    ----------
    mode : {"logistic", "quadratic"}
    train, test : list of DataShard
        One entry per UE.
    w0 : (p, C) array
        Foundation parameters.
    ridge : float
        Ridge coefficient ``mu_r`` applied to the full parameter.
    n_outputs : int
        Number of classes or regression outputs ``C``.
    """

    mode: str
    train: list
    test: list
    w0: np.ndarray
    ridge: float
    n_outputs: int
    _refs: dict = field(default_factory=dict, repr=False)
    _pool: DataShard | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown task mode {self.mode!r}")
        if not self.ridge > 0:
            raise ValueError("ridge coefficient must be positive")
        if len(self.train) != len(self.test):
            raise ValueError("train and test shard lists differ in length")

    @property
    def n_ues(self) -> int:
        return len(self.train)

    @property
    def n_features(self) -> int:
        return self.w0.shape[0]

    @property
    def dim(self) -> int:
        return self.w0.size

    def _as_matrix(self, w):
        return np.asarray(w, dtype=float).reshape(self.n_features, self.n_outputs)

    # --- loss primitives on the full parameter ---

    def risk(self, w, shard: DataShard) -> float:
        """Mean per-sample loss plus ridge at the full parameter ``w``."""
        W = self._as_matrix(w)
        Z = shard.X @ W
        if self.mode == "logistic":
            data = -np.mean(log_softmax(Z, axis=1)[np.arange(len(Z)), shard.Y])
        else:
            data = 0.5 * np.mean(np.sum((Z - shard.Y) ** 2, axis=1))
        return float(data + 0.5 * self.ridge * np.sum(W * W))

    def risks(self, ws, shard: DataShard) -> np.ndarray:
        """:meth:`risk` for a stack of full parameters ``(M, p, C)`` at once."""
        Ws = np.asarray(ws, dtype=float).reshape(-1, self.n_features, self.n_outputs)
        Z = np.matmul(shard.X[None], Ws)
        if self.mode == "logistic":
            m = Z.max(axis=2, keepdims=True)
            lse = np.log(np.sum(np.exp(Z - m), axis=2)) + m[..., 0]
            data = np.mean(lse - Z[:, np.arange(len(shard)), shard.Y], axis=1)
        else:
            data = 0.5 * np.mean(np.sum((Z - shard.Y[None]) ** 2, axis=2), axis=1)
        return data + 0.5 * self.ridge * np.sum(Ws * Ws, axis=(1, 2))

    def reference_risk(self, k: int) -> float:
        key = ("risk", k)
        if key not in self._refs:
            self._refs[key] = self.risk(self.reference(k), self.test[k])
        return self._refs[key]

    def _residual(self, Z, Y):
        if self.mode == "logistic":
            R = softmax(Z, axis=1)
            R[np.arange(len(Z)), Y] -= 1.0
            return R
        return Z - Y

    def gradient(self, w, shard: DataShard) -> np.ndarray:
        """Gradient of :meth:`risk` as a ``(p, C)`` matrix."""
        if len(shard) == 0:
            raise ValueError("empty batch")
        W = self._as_matrix(w)
        R = self._residual(shard.X @ W, shard.Y)
        return shard.X.T @ R / len(shard) + self.ridge * W

    def hessian(self, w, shard: DataShard) -> np.ndarray:
        W = self._as_matrix(w)
        X = shard.X
        p, C = W.shape
        if self.mode == "quadratic":
            H = np.kron(X.T @ X / len(X), np.eye(C))
        else:
            S = softmax(X @ W, axis=1)
            H = np.zeros((p * C, p * C))
            for x, s in zip(X, S):
                H += np.kron(np.outer(x, x), np.diag(s) - np.outer(s, s))
            H /= len(X)
        return H + self.ridge * np.eye(p * C)

    # --- constants ---

    def feature_radius_sq(self) -> float:
        return float(max(np.max(np.sum(s.X**2, axis=1)) for s in self.train + self.test if len(s)))

    def smoothness(self) -> tuple[float, float]:
        """``(epsilon, xi)`` from the per-sample Hessian bounds."""
        r2 = self.feature_radius_sq()
        curv = 0.5 * r2 if self.mode == "logistic" else r2
        return curv + self.ridge, self.ridge

    def pooled_train(self) -> DataShard:
        if self._pool is None:
            self._pool = DataShard(np.concatenate([s.X for s in self.train]), np.concatenate([s.Y for s in self.train]))
        return self._pool

    def reference(self, k: int) -> np.ndarray:
        """Minimiser of UE ``k``'s test risk (cached)."""
        if k not in self._refs:
            self._refs[k] = solve_reference(self, self.test[k])
        return self._refs[k]

    def parameter_radius(self) -> float:
        """Norm scale covering the foundation and every per-UE optimum."""
        w0 = self.w0.ravel()
        refs = [self.reference(k).ravel() for k in range(self.n_ues)]
        return float(max([np.linalg.norm(w0)] + [max(np.linalg.norm(r), np.linalg.norm(r - w0)) for r in refs]))

    # --- sampling protocol used by bound.estimate_constants ---

    def sample_adapters(self, n: int, radius: float, rng) -> np.ndarray:
        """``n`` full parameters uniform in the ball of ``radius`` around 0."""
        g = rng.standard_normal((n, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = radius * rng.random(n) ** (1.0 / self.dim)
        return g * r[:, None]

    def sample_points(self, n: int, rng) -> np.ndarray:
        return rng.integers(0, len(self.pooled_train()), size=n)

    def per_sample_gradient_norms_sq(self, ws, idx) -> np.ndarray:
        pool = self.pooled_train()
        X = pool.X[idx]
        Y = pool.Y[idx]
        Ws = np.asarray(ws).reshape(-1, self.n_features, self.n_outputs)
        Z = np.einsum("np,npc->nc", X, Ws)
        if self.mode == "logistic":
            R = softmax(Z, axis=1)
            R[np.arange(len(Z)), Y] -= 1.0
        else:
            R = Z - Y
        # || x r^T + mu W ||^2
        cross = np.einsum("nc,nc->n", R, Z)
        return (
            np.sum(X**2, axis=1) * np.sum(R**2, axis=1)
            + 2 * self.ridge * cross
            + self.ridge**2 * np.sum(Ws**2, axis=(1, 2))
        )

    def global_gradient_norms_sq(self, ws) -> np.ndarray:
        pool = self.pooled_train()
        Ws = np.asarray(ws, dtype=float).reshape(-1, self.n_features, self.n_outputs)
        Z = np.matmul(pool.X[None], Ws)
        if self.mode == "logistic":
            R = softmax(Z, axis=2)
            R[:, np.arange(len(pool)), pool.Y] -= 1.0
        else:
            R = Z - pool.Y[None]
        G = np.matmul(pool.X.T[None], R) / len(pool) + self.ridge * Ws
        return np.sum(G**2, axis=(1, 2))


class LoraAdapter:
    """One trainable module.

    ``rank=None`` trains ``dW`` directly. Otherwise ``dW = B @ A`` with
    ``B`` (``p x r``) initialised to zero and ``A`` (``r x C``) Gaussian with
    standard deviation ``init_scale``.
    """

    def __init__(self, n_features: int, n_outputs: int, rank: int | None = None, rng=None,
                 init_scale: float = 1.0):
        self.shape = (n_features, n_outputs)
        self.rank = rank
        if rank is None:
            self.params = np.zeros(n_features * n_outputs)
        else:
            if not 1 <= rank <= min(n_features, n_outputs):
                raise ValueError(f"rank must lie in [1, {min(n_features, n_outputs)}]")
            if rng is None:
                raise ValueError("a LoRA adapter needs an rng for its A factor")
            A = init_scale * rng.standard_normal((rank, n_outputs))
            self.params = np.concatenate([np.zeros(n_features * rank), A.ravel()])

    def _factors(self):
        p, C = self.shape
        r = self.rank
        return self.params[: p * r].reshape(p, r), self.params[p * r :].reshape(r, C)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def delta(self) -> np.ndarray:
        """``dW`` as a ``(p, C)`` matrix."""
        if self.rank is None:
            return self.params.reshape(self.shape)
        B, A = self._factors()
        return B @ A

    def pullback(self, G) -> np.ndarray:
        """Chain rule from a ``dW`` gradient to a gradient in the trainable parameters."""
        G = np.asarray(G).reshape(self.shape)
        if self.rank is None:
            return G.ravel().copy()
        B, A = self._factors()
        return np.concatenate([(G @ A.T).ravel(), (B.T @ G).ravel()])

    def step_scale(self) -> float:
        """Step multiplier that keeps gradient descent in factor space stable.

        The factor-space Hessian of ``F(B A)`` is bounded by about
        ``epsilon (||A||^2 + ||B||^2)`` (spectral norms), so a step of
        ``1/epsilon`` is scaled by ``1 / max(1, ||A||^2 + ||B||^2)``. The
        direct parameterisation returns 1.
        """
        if self.rank is None:
            return 1.0
        B, A = self._factors()
        return 1.0 / max(1.0, np.linalg.norm(A, 2) ** 2 + np.linalg.norm(B, 2) ** 2)

    def copy(self) -> "LoraAdapter":
        out = object.__new__(LoraAdapter)
        out.shape, out.rank, out.params = self.shape, self.rank, self.params.copy()
        return out


def make_task(mode: str, n_ues: int, n_features: int, n_outputs: int, samples_per_ue: int,
              concentration: float, ridge: float, rng, feature_radius: float = 1.0,
              test_fraction: float = 0.2, noise: float = 0.1, n_groups: int | None = None,
              w0_scale: float = 0.1, class_sep: float = 1.0) -> SyntheticTask:
    """Generate a task with label-skewed (Dirichlet) UE shards.

    Logistic mode draws class-conditional Gaussian features around random
    class means; quadratic mode draws ``n_groups`` linear teachers and uses
    the teacher id as the partition label. Features are clipped to norm
    ``feature_radius``. Each shard is split into train and test parts.
    """
    if mode not in MODES:
        raise ValueError(f"unknown task mode {mode!r}")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    total = n_ues * samples_per_ue
    if mode == "logistic":
        means = class_sep * rng.standard_normal((n_outputs, n_features)) / np.sqrt(n_features)
        labels = rng.integers(0, n_outputs, size=total)
        X = means[labels] + noise * rng.standard_normal((total, n_features))
    else:
        n_groups = n_groups or n_outputs
        X = rng.standard_normal((total, n_features)) / np.sqrt(n_features)
        labels = rng.integers(0, n_groups, size=total)
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    X = X * np.minimum(1.0, feature_radius / np.maximum(norms, 1e-300))
    if mode == "logistic":
        Y = labels
    else:
        teachers = rng.standard_normal((n_groups, n_features, n_outputs))
        Y = np.einsum("np,npc->nc", X, teachers[labels]) + noise * rng.standard_normal((total, n_outputs))
    shards = partition_dirichlet(labels, n_ues, concentration, rng, min_size=2)
    train, test = [], []
    for idx in shards:
        idx = rng.permutation(idx)
        n_te = min(max(1, int(round(test_fraction * len(idx)))), len(idx) - 1)
        test.append(DataShard(X[idx[:n_te]], Y[idx[:n_te]]))
        train.append(DataShard(X[idx[n_te:]], Y[idx[n_te:]]))
    w0 = w0_scale * rng.standard_normal((n_features, n_outputs))
    return SyntheticTask(mode, train, test, w0, ridge, n_outputs)


def partition_dirichlet(labels, K: int, concentration: float, rng, min_size: int = 1,
                        max_attempts: int = 1000) -> list:
    """Split sample indices into ``K`` label-skewed shards.

    For each label, shard proportions are drawn from a symmetric Dirichlet
    with the given concentration. Draws leaving a shard with fewer than
    ``min_size`` samples are rejected and redrawn.
    """
    labels = np.asarray(labels)
    if not concentration > 0:
        raise ValueError("concentration must be positive")
    if K > len(labels):
        raise ValueError(f"cannot split {len(labels)} samples into {K} shards")
    if K * min_size > len(labels):
        raise ValueError(f"{len(labels)} samples cannot give {K} shards of size {min_size}")
    classes = np.unique(labels)
    for _ in range(max_attempts):
        parts = [[] for _ in range(K)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            props = rng.dirichlet(np.full(K, concentration))
            cuts = (np.cumsum(props)[:-1] * len(idx)).astype(int)
            for k, chunk in enumerate(np.split(idx, cuts)):
                parts[k].append(chunk)
        shards = [np.sort(np.concatenate(p)) for p in parts]
        if min(len(s) for s in shards) >= min_size:
            return shards
    raise RuntimeError(f"no Dirichlet draw gave every shard {min_size} samples after {max_attempts} attempts")


def sample_batch(shard: DataShard, fraction: float, rng) -> DataShard:
    """Uniform subsample of ``max(1, round(fraction * len))`` rows without replacement."""
    if not 0 < fraction <= 1:
        raise ValueError("batch fraction must lie in (0, 1]")
    m = max(1, int(round(fraction * len(shard))))
    if m >= len(shard):
        return shard
    return shard.subset(np.sort(rng.choice(len(shard), size=m, replace=False)))


def local_gradient(adapter: LoraAdapter, batch: DataShard, task: SyntheticTask) -> np.ndarray:
    """Mean per-sample gradient over ``batch`` at ``W0 + dW``, in adapter coordinates."""
    if len(batch) == 0:
        raise ValueError("empty batch: D_k^t must be at least 1")
    G = task.gradient(task.w0 + adapter.delta, batch)
    return adapter.pullback(G)


def aggregate(params, gradients, D, beta_n, gamma_n, eta: float):
    """Weighted aggregation of successful subscribed uploads.

    ``params - eta * sum_k D_k b_k g_k grad_k / sum_k D_k b_k g_k``.

    Returns
    -------
    new_params : ndarray
    weights : ndarray
        Normalised per-UE weights (all zero when nothing arrived).
    applied : bool
        ``False`` when no subscribed upload succeeded; ``params`` is then
        returned unchanged.
    """
    D = np.asarray(D, dtype=float)
    if np.any(D < 0):
        raise ValueError("data volumes must be non-negative")
    raw = D * np.asarray(beta_n, dtype=float) * np.asarray(gamma_n, dtype=float)
    denom = raw.sum()
    params = np.asarray(params, dtype=float)
    if denom == 0:
        return params.copy(), np.zeros_like(raw), False
    weights = raw / denom
    step = np.tensordot(weights, np.asarray(gradients, dtype=float), axes=1)
    return params - eta * step, weights, True


def ensemble_risk(task: SyntheticTask, deltas, shard: DataShard) -> float:
    """Uniform ensemble risk ``(1/N) sum_n F(W0 + dW_n)`` on ``shard``."""
    if len(deltas) == 0:
        raise ValueError("ensemble needs at least one module")
    return float(np.mean(task.risks(task.w0[None] + np.asarray(deltas), shard)))


def measured_phi(task: SyntheticTask, deltas, rho) -> float:
    """Risk gap ``sum_k rho_k [ensemble_risk_k - F_k(w*_k)]`` on the test shards."""
    rho = np.asarray(rho, dtype=float)
    gaps = [ensemble_risk(task, deltas, task.test[k]) - task.reference_risk(k) for k in range(task.n_ues)]
    return float(rho @ np.asarray(gaps))


def solve_reference(task: SyntheticTask, shard: DataShard, max_iter: int = 100) -> np.ndarray:
    """Minimiser of ``task.risk`` on ``shard`` by damped Newton.

    Raises
    ------
    ReferenceError
        If the gradient norm is not below ``1e-9`` within ``max_iter`` steps.
    """
    if len(shard) == 0:
        raise ValueError("reference solve needs a non-empty shard")
    w = np.zeros(task.dim)
    f = task.risk(w, shard)
    for _ in range(max_iter):
        g = task.gradient(w, shard).ravel()
        if np.linalg.norm(g) < REF_GRAD_TOL:
            return w.reshape(task.w0.shape)
        step = np.linalg.solve(task.hessian(w, shard), g)
        t = 1.0
        while True:
            cand = w - t * step
            f_c = task.risk(cand, shard)
            if f_c <= f - 1e-4 * t * (g @ step) or t < 1e-12:
                break
            t *= 0.5
        w, f = cand, f_c
    g = task.gradient(w, shard).ravel()
    if np.linalg.norm(g) < REF_GRAD_TOL:
        return w.reshape(task.w0.shape)
    raise ReferenceError(f"Newton stopped at gradient norm {np.linalg.norm(g):.3g} after {max_iter} steps")


def save_task(path, task: SyntheticTask, meta: dict) -> None:
    """Write ``task`` to ``path`` (npz) with a JSON metadata block.

    ``meta`` should carry at least the seed and the config hash; a content
    digest of the arrays is added so that reloads can be verified.
    """
    arrays = {"w0": task.w0}
    for k in range(task.n_ues):
        arrays[f"train_X_{k}"] = task.train[k].X
        arrays[f"train_Y_{k}"] = task.train[k].Y
        arrays[f"test_X_{k}"] = task.test[k].X
        arrays[f"test_Y_{k}"] = task.test[k].Y
    digest = hashlib.sha256()
    for key in sorted(arrays):
        digest.update(key.encode())
        digest.update(np.ascontiguousarray(arrays[key]).tobytes())
    header = dict(meta, mode=task.mode, ridge=task.ridge, n_outputs=task.n_outputs, n_ues=task.n_ues,
                  digest=digest.hexdigest())
    arrays["meta"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(Path(path), "wb") as fh:
        np.savez(fh, **arrays)


def load_task(path) -> tuple[SyntheticTask, dict]:
    with np.load(Path(path)) as z:
        meta = json.loads(bytes(z["meta"]).decode())
        K = meta["n_ues"]
        shard = lambda part, k: DataShard(z[f"{part}_X_{k}"], z[f"{part}_Y_{k}"])
        task = SyntheticTask(meta["mode"], [shard("train", k) for k in range(K)],
                             [shard("test", k) for k in range(K)], z["w0"], meta["ridge"], meta["n_outputs"])
    return task, meta
