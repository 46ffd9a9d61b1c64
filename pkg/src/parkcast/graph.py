"""Travel-time graphs, normalized Laplacians and Chebyshev spectral filtering."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, activation, as_tensor, concat, matmul, vertex_matmul
from .numerics import ParamSpec

log = logging.getLogger(__name__)

ISOLATED_DEGREE = 1e-8


@dataclass
class WeightedGraph:
    W: np.ndarray
    node_labels: list = field(default_factory=list)

    @property
    def n(self):
        return self.W.shape[0]

    def hops(self):
        """All-pairs hop distance over edges with positive weight (inf if unreachable)."""
        adj = self.W > 0
        dist = np.full((self.n, self.n), np.inf)
        for src in range(self.n):
            dist[src, src] = 0
            frontier = [src]
            d = 0
            while frontier:
                d += 1
                nxt = []
                for u in frontier:
                    for v in np.flatnonzero(adj[u]):
                        if dist[src, v] == np.inf:
                            dist[src, v] = d
                            nxt.append(v)
                frontier = nxt
        return dist


@dataclass
class ScaledLaplacian:
    L: np.ndarray
    lambda_max: float
    L_tilde: np.ndarray

    @property
    def n(self):
        return self.L.shape[0]

    @classmethod
    def from_laplacian(cls, L, lambda_max=None):
        if lambda_max is None:
            lambda_max = estimate_lambda_max(L)
        n = L.shape[0]
        return cls(L=L, lambda_max=float(lambda_max), L_tilde=2.0 * L / lambda_max - np.eye(n))

    @classmethod
    def from_graph(cls, g, lambda_max="power"):
        L = normalized_laplacian(g)
        lm = 2.0 if lambda_max == "bound" else (None if lambda_max == "power" else float(lambda_max))
        return cls.from_laplacian(L, lm)


@dataclass
class FilterParams:
    theta: np.ndarray   # (K, D_in, D_out)

    @property
    def K(self):
        return self.theta.shape[0]


def build_weight_matrix(travel_time, labels=None):
    """Closeness weights 1/t_ij, symmetrized by arithmetic mean, zero diagonal.

    Infinite travel times mean "no direct closeness" and give weight 0.
    """
    t = np.asarray(travel_time, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError(f"travel-time matrix must be square, got {t.shape}")
    n = t.shape[0]
    if n < 2:
        raise ValueError("a graph needs at least two nodes")
    off = ~np.eye(n, dtype=bool)
    if np.isnan(t[off]).any() or (t[off] <= 0).any():
        bad = np.argwhere(off & ~(t > 0))
        raise ValueError(f"non-positive travel time at {[tuple(map(int, b)) for b in bad[:5]]}")
    W = np.zeros((n, n))
    with np.errstate(divide="ignore"):
        W[off] = 1.0 / t[off]
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    return WeightedGraph(W=W, node_labels=labels)


def normalized_laplacian(g):
    """L = I - D^-1/2 W D^-1/2.  Isolated nodes get a tiny degree and a warning."""
    W = g.W if isinstance(g, WeightedGraph) else np.asarray(g, dtype=np.float64)
    deg = W.sum(axis=1)
    isolated = deg <= 0
    if isolated.any():
        log.warning("isolated nodes %s given degree %g", np.flatnonzero(isolated).tolist(), ISOLATED_DEGREE)
        deg = np.where(isolated, ISOLATED_DEGREE, deg)
    d = 1.0 / np.sqrt(deg)
    L = np.eye(W.shape[0]) - d[:, None] * W * d[None, :]
    return 0.5 * (L + L.T)


def estimate_lambda_max(L, tol=1e-9, max_iter=1000, ritz_vectors=8):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Iterates until the Rayleigh quotient changes by less than ``tol``
    (relative).  Near-degenerate top eigenvalues make that quotient settle
    below the true maximum, so the last few iterates are combined by a
    Rayleigh-Ritz step and the Ritz residual is added as a safety margin.
    """
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2 or L.shape[0] != L.shape[1] or not np.allclose(L, L.T, atol=1e-12):
        raise ValueError("lambda_max needs a symmetric matrix")
    n = L.shape[0]
    # deterministic start with no special alignment to any eigenvector
    v = np.cos(np.arange(1, n + 1) * 1.3) + 1.0 / np.sqrt(n)
    v /= np.linalg.norm(v)
    recent = [v]
    est = 0.0
    for _ in range(max_iter):
        w = L @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
        recent = recent[-(ritz_vectors - 1):] + [v]
        new = float(v @ L @ v)
        if abs(new - est) <= tol * max(abs(new), 1e-300):
            est = new
            break
        est = new
    if est <= 0:
        return 1e-6
    U, sv, _ = np.linalg.svd(np.stack(recent, axis=1), full_matrices=False)
    Q = U[:, sv > 1e-10 * sv[0]]
    theta, Y = np.linalg.eigh(Q.T @ L @ Q)
    y = Q @ Y[:, -1]
    resid = float(np.linalg.norm(L @ y - theta[-1] * y))
    return max(float(theta[-1]) + resid, 1e-6)


def chebyshev_basis(L_tilde, x, K):
    """[T_0(L~)x, ..., T_{K-1}(L~)x] via z_k = 2 L~ z_{k-1} - z_{k-2}."""
    x = as_tensor(x)
    zs = [x]
    if K > 1:
        zs.append(vertex_matmul(L_tilde, x))
    for _ in range(2, K):
        zs.append(vertex_matmul(L_tilde, zs[-1]) * 2.0 - zs[-2])
    return zs


def chebyshev_filter(sl, x, theta):
    """Sum over k of T_k(L~) x theta_k for a signal x of shape (..., n, D_in).

    ``theta`` has shape (K, D_in, D_out) and may be a Param.
    """
    theta = theta.theta if isinstance(theta, FilterParams) else theta
    theta = as_tensor(theta)
    x = as_tensor(x)
    if theta.ndim != 3:
        raise ValueError(f"theta must be (K, D_in, D_out), got {theta.shape}")
    K, d_in, d_out = theta.shape
    if K < 1:
        raise ValueError("filter order K must be >= 1")
    L_tilde = sl.L_tilde if isinstance(sl, ScaledLaplacian) else np.asarray(sl)
    if x.ndim < 2 or x.shape[-2] != L_tilde.shape[0] or x.shape[-1] != d_in:
        from .autodiff import ShapeError
        raise ShapeError("chebyshev_filter", x.shape, theta.shape,
                         f"signal must be (..., {L_tilde.shape[0]}, {d_in})")
    zs = chebyshev_basis(L_tilde, x, K)
    stacked = concat(zs, axis=-1) if K > 1 else zs[0]
    return matmul(stacked, theta.reshape(K * d_in, d_out))


def spectral_filter_direct(L, x, theta, lambda_max=None):
    """Oracle: U g(Lambda) U^T x with g a Chebyshev series in the scaled spectrum."""
    L = np.asarray(L, dtype=np.float64)
    theta = np.asarray(theta.theta if isinstance(theta, FilterParams) else theta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    try:
        lam, U = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed: {exc}") from exc
    if lambda_max is None:
        lambda_max = estimate_lambda_max(L)
    lt = 2.0 * lam / lambda_max - 1.0
    K = theta.shape[0]
    T = np.empty((K, lam.size))
    T[0] = 1.0
    if K > 1:
        T[1] = lt
    for k in range(2, K):
        T[k] = 2.0 * lt * T[k - 1] - T[k - 2]
    xs = U.T @ x                     # (n, D_in) in the Fourier basis
    y = np.zeros((x.shape[0], theta.shape[2]))
    for k in range(K):
        y += U @ (T[k][:, None] * xs) @ theta[k]
    return y


def gcnn_param_specs(prefix, K, d_in, d_out):
    return [
        ParamSpec(f"{prefix}.theta", (K, d_in, d_out), fan_in=K * d_in, fan_out=d_out),
        ParamSpec(f"{prefix}.bias", (d_out,), kind="bias"),
    ]


def gcnn_layer(x, sl, theta, bias, act="relu"):
    """activation(chebyshev_filter(x) + bias)."""
    return activation(act)(chebyshev_filter(sl, x, theta) + bias)


def read_travel_time_csv(path):
    """Header row of block ids, then n rows of seconds ("inf" allowed)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty travel-time file")
    labels = rows[0]
    n = len(labels)
    data = rows[1:]
    if len(data) != n:
        raise ValueError(f"{path}: expected {n} data rows, found {len(data)}")
    t = np.empty((n, n))
    for i, row in enumerate(data):
        if len(row) != n:
            raise ValueError(f"{path}:{i + 2}: expected {n} columns, found {len(row)}")
        try:
            t[i] = [float(v) for v in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{i + 2}: {exc}") from None
    return labels, t


def write_travel_time_csv(path, labels, t):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in np.asarray(t):
            w.writerow(["inf" if np.isinf(v) else repr(float(v)) for v in row])
