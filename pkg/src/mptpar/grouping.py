"""Pairwise same-group prediction and spectral group detection."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .numerics import ParamStore, Tensor
from .numerics import tensor as T
from .numerics.ops import init_linear

Partition = list[list[int]]

DIAG_LOGIT = 30.0
DEFAULT_KMAX = 8
KMEANS_RESTARTS = 10


# ---------------------------------------------------------------- partitions

def validate_partition(partition: Sequence[Sequence[int]], n: int) -> None:
    members = [i for g in partition for i in g]
    if any(len(g) == 0 for g in partition):
        raise ValueError("partition contains an empty group")
    if sorted(members) != list(range(n)):
        raise ValueError(f"partition does not cover 0..{n - 1} exactly once")


def canonical(partition: Sequence[Sequence[int]]) -> Partition:
    """Members ascending, groups ordered by their smallest member."""
    return sorted((sorted(int(i) for i in g) for g in partition if len(g)), key=lambda g: g[0])


def relation_from_partition(partition: Sequence[Sequence[int]], n: int) -> np.ndarray:
    r = np.zeros((n, n))
    for g in partition:
        idx = np.asarray(list(g))
        r[np.ix_(idx, idx)] = 1.0
    return r


# ---------------------------------------------------------------- relation head

def init_relation(store: ParamStore, dim: int, hidden: int, rng: np.random.Generator,
                  prefix: str = "relation") -> None:
    init_linear(store, f"{prefix}.h", 3 * dim, hidden, rng)
    init_linear(store, f"{prefix}.out", hidden, 1, rng)


def relation_logits(x_st: Tensor, store: ParamStore, prefix: str = "relation") -> Tensor:
    """Symmetric ``[N, N]`` same-group logits from ``MLP([x_i; x_j; x_i*x_j])``.

    The diagonal is pinned to a large constant; it carries no gradient and is
    excluded from the loss.
    """
    n, d = x_st.shape
    xi = T.broadcast_to(T.reshape(x_st, (n, 1, d)), (n, n, d))
    xj = T.broadcast_to(T.reshape(x_st, (1, n, d)), (n, n, d))
    pair = T.concat([xi, xj, xi * xj], axis=2)
    h = T.gelu(T.linear(pair, store[f"{prefix}.h.w"], store[f"{prefix}.h.b"]))
    raw = T.reshape(T.linear(h, store[f"{prefix}.out.w"], store[f"{prefix}.out.b"]), (n, n))
    sym = (raw + T.transpose(raw)) * 0.5
    off = 1.0 - np.eye(n)
    return sym * off + DIAG_LOGIT * np.eye(n)


def off_diagonal(m, n: int):
    rows, cols = np.where(~np.eye(n, dtype=bool))
    return m[rows, cols]


def affinity_from_logits(logits: np.ndarray) -> np.ndarray:
    a = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=float)))
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return a


# ---------------------------------------------------------------- eigensolver

def sym_eigendecomp(a, sym_tol: float = 1e-10, max_sweeps: int = 60) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns eigenvalues ascending and the matching orthonormal eigenvectors
    as columns.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if np.max(np.abs(a - a.T), initial=0.0) > sym_tol:
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a) or 1.0
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offmask])
        if off <= 1e-15 * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) + 100.0 * abs(apq) == abs(diff):
                    t = apq / diff
                else:
                    tau = diff / (2.0 * apq)
                    t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - s * cq
                a[:, q] = s * cp + c * cq
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = a[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


# ---------------------------------------------------------------- clustering

def kmeans(points: np.ndarray, k: int, seed: int, restarts: int = KMEANS_RESTARTS,
           max_iter: int = 100) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; best of ``restarts`` by inertia."""
    rng = np.random.default_rng(seed)
    n = len(points)
    best_labels, best_inertia = None, np.inf
    for _ in range(restarts):
        centers = [points[rng.integers(n)]]
        for _ in range(1, k):
            d2 = np.min(((points[:, None] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
            total = d2.sum()
            idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
            centers.append(points[idx])
        centers = np.array(centers)
        labels = np.full(n, -1)
        for _ in range(max_iter):
            d2 = ((points[:, None] - centers[None]) ** 2).sum(-1)
            new = np.argmin(d2, axis=1)
            for j in range(k):
                if not np.any(new == j):
                    far = int(np.argmax(d2[np.arange(n), new]))
                    new[far] = j
            if np.array_equal(new, labels):
                break
            labels = new
            centers = np.array([points[labels == j].mean(axis=0) for j in range(k)])
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels.copy(), inertia
    return best_labels


def choose_k(eigvals: np.ndarray, kmax: int) -> int:
    """Largest gap among the first ``kmax + 1`` eigenvalues.

    When ``kmax`` reaches N, the missing ``lambda_{N+1}`` is taken as 1, the
    spectrum's value for fully connected clusters, so "all singletons" wins
    only when every eigenvalue is near zero.
    """
    n = len(eigvals)
    kmax = max(1, min(kmax, n))
    lam = list(eigvals[: kmax + 1])
    if len(lam) < kmax + 1:
        lam.append(1.0)
    gaps = np.diff(lam)
    return int(np.argmax(gaps)) + 1


def spectral_cluster(affinity, kmax: int | None = None, seed: int = 0) -> Partition:
    """Group detection on a symmetric affinity in ``[0, 1]``.

    Normalized Laplacian ``I - D^-1/2 A D^-1/2``, eigengap choice of k,
    row-normalized leading eigenvectors, seeded k-means. Nodes with zero
    degree become singleton groups.
    """
    a = np.asarray(affinity, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("affinity must be square")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ValueError("affinity is not symmetric")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("affinity must be finite and non-negative")
    if n == 0:
        return []
    if kmax is None:
        kmax = min(n, DEFAULT_KMAX)
    if kmax > n:
        raise ValueError("kmax exceeds the number of individuals")

    deg = a.sum(axis=1)
    isolated = [i for i in range(n) if deg[i] <= 1e-12]
    live = np.array([i for i in range(n) if deg[i] > 1e-12], dtype=int)
    groups: Partition = [[i] for i in isolated]
    if len(live) == 1:
        groups.append([int(live[0])])
    elif len(live) > 1:
        sub = a[np.ix_(live, live)]
        dinv = 1.0 / np.sqrt(deg[live])
        lap = np.eye(len(live)) - dinv[:, None] * sub * dinv[None, :]
        w, v = sym_eigendecomp(0.5 * (lap + lap.T))
        k = choose_k(w, min(kmax, len(live)))
        u = v[:, :k]
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        u = u / np.where(norms > 0, norms, 1.0)
        labels = np.zeros(len(live), dtype=int) if k == 1 else kmeans(u, k, seed)
        for j in np.unique(labels):
            groups.append([int(i) for i in live[labels == j]])
    part = canonical(groups)
    validate_partition(part, n)
    return part
