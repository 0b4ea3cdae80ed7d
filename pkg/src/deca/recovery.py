"""First-level recovery: sensing matrices, in-network coding, l1 decoding.

The decoder solves min ||w||_1 s.t. ||Phi Psi w - v||_2 <= eps with an
accelerated proximal-gradient iteration on the penalized form
lam*||w||_1 + 0.5*||A w - v||^2, decreasing lam until the constraint holds,
then polishing at the final lam. Independent (per tree) and joint
(block-diagonal) modes share the same solver.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

DENSE = "DENSE"
BLOCK_DIAGONAL = "BLOCK_DIAGONAL"
GAUSSIAN = "GAUSSIAN"
BERNOULLI = "BERNOULLI"

MAX_ITERATIONS = 10_000
CONVERGENCE_TOL = 1e-8
_STAGE_TOL = 3e-5
_LAMBDA_FACTOR = 0.25


@dataclass(frozen=True)
class SensingMatrix:
    k: int
    n: int
    layout: str
    entry_kind: str
    seed: int
    blocks: tuple | None
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)


@dataclass(frozen=True)
class RecoveryResult:
    w_hat: np.ndarray
    u_hat: np.ndarray
    residual_l2: float
    iterations: int
    converged: bool


def _draw(rng, entry_kind, k_norm, shape):
    if entry_kind == GAUSSIAN:
        return rng.normal(0.0, math.sqrt(1.0 / k_norm), shape)
    if entry_kind == BERNOULLI:
        return (rng.integers(0, 2, shape) * 2 - 1) / math.sqrt(k_norm)
    raise ValueError(f"unknown entry kind {entry_kind!r}")


def make_sensing_matrix(
    k: int,
    n: int,
    layout: str = DENSE,
    entry_kind: str = BERNOULLI,
    seed: int = 0,
    blocks=None,
) -> SensingMatrix:
    """Random measurement matrix; block layout scales each block by its own k_i."""
    if k > n:
        raise ValueError(f"k={k} exceeds signal length n={n}")
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    if layout == DENSE:
        mat = _draw(rng, entry_kind, k, (k, n))
        blocks = None
    elif layout == BLOCK_DIAGONAL:
        if blocks is None:
            raise ValueError("block layout needs (k_i, n_i) sizes")
        blocks = tuple((int(ki), int(ni)) for ki, ni in blocks)
        if sum(b[0] for b in blocks) != k or sum(b[1] for b in blocks) != n:
            raise ValueError("block sizes must sum to (k, n)")
        mat = np.zeros((k, n))
        r = c = 0
        for ki, ni in blocks:
            mat[r : r + ki, c : c + ni] = _draw(rng, entry_kind, ki, (ki, ni))
            r += ki
            c += ni
    else:
        raise ValueError(f"unknown layout {layout!r}")
    return SensingMatrix(
        k=k, n=n, layout=layout, entry_kind=entry_kind, seed=seed,
        blocks=blocks, matrix=mat,
    )


def encode(phi: SensingMatrix, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (phi.n,):
        raise ValueError(f"signal length {u.shape} does not match n={phi.n}")
    if not np.all(np.isfinite(u)):
        raise ValueError("signal has non-finite entries")
    return phi.matrix @ u


def _power_iteration_norm(a: np.ndarray, iters: int = 60) -> float:
    rng = np.random.default_rng(7)
    x = rng.standard_normal(a.shape[1])
    x /= np.linalg.norm(x)
    s = 1.0
    for _ in range(iters):
        y = a.T @ (a @ x)
        s = np.linalg.norm(y)
        if s == 0:
            return 1.0
        x = y / s
    return s


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _fista_stage(a, atv, v, w, lam, step, tol, budget):
    """Momentum proximal-gradient with adaptive restart; returns (w, iters)."""
    z = w.copy()
    t = 1.0
    thresh = lam * step
    for it in range(1, budget + 1):
        grad = a.T @ (a @ z) - atv
        w_new = _soft(z - step * grad, thresh)
        dw = w_new - w
        if np.dot(z.ravel() - w_new.ravel(), dw.ravel()) > 0:
            t_new = 1.0
            z = w_new.copy()
        else:
            t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            z = w_new + ((t - 1.0) / t_new) * dw
        scale = np.linalg.norm(w_new)
        done = np.linalg.norm(dw) <= tol * max(scale, 1e-30)
        w = w_new
        t = t_new
        if done:
            return w, it
    return w, budget


def _solve_l1(a: np.ndarray, v: np.ndarray, epsilon: float, max_iter: int, tol: float):
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(v))):
        raise ValueError("non-finite inputs")
    n = a.shape[1]
    w = np.zeros(n)
    nv = float(np.linalg.norm(v))
    if nv <= epsilon:
        return w, nv, 0, True
    step = 1.0 / max(_power_iteration_norm(a) * 1.02, 1e-12)
    atv = a.T @ v
    lam0 = 0.99 * np.max(np.abs(atv))
    lam = lam0
    lam_floor = 1e-10 * lam0
    # near-exact fits must track the continuation tightly: nullspace error
    # left by loose stages freezes once the penalty is small
    scout_tol = _STAGE_TOL if epsilon > 1e-6 * nv else max(tol, 1e-9)
    used = 0
    converged = False
    while used < max_iter:
        w, it = _fista_stage(a, atv, v, w, lam, step, scout_tol, max_iter - used)
        used += it
        residual = np.linalg.norm(a @ w - v)
        if residual <= epsilon:
            w, it = _fista_stage(a, atv, v, w, lam, step, tol, max_iter - used)
            used += it
            residual = np.linalg.norm(a @ w - v)
            if residual <= epsilon:
                converged = True
                break
            continue
        if lam == 0.0:
            # land accurately on the l1 path at the floor before the final
            # least-squares projection, which is blind to coefficient size
            w, it = _fista_stage(a, atv, v, w, lam_floor, step, tol, max_iter - used)
            used += it
            w, it = _fista_stage(a, atv, v, w, 0.0, step, tol, max_iter - used)
            used += it
            residual = np.linalg.norm(a @ w - v)
            converged = residual <= epsilon
            break
        lam = lam * _LAMBDA_FACTOR if lam > lam_floor else 0.0
    residual = float(np.linalg.norm(a @ w - v))
    return w, residual, used, converged and residual <= epsilon


def recover(
    v,
    phi,
    psi: np.ndarray,
    epsilon: float,
    max_iter: int = MAX_ITERATIONS,
    tol: float = CONVERGENCE_TOL,
) -> RecoveryResult:
    phi_mat = phi.matrix if isinstance(phi, SensingMatrix) else np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    v = np.asarray(v, dtype=float)
    a = phi_mat @ psi
    w, residual, used, converged = _solve_l1(a, v, epsilon, max_iter, tol)
    return RecoveryResult(
        w_hat=w,
        u_hat=psi @ w,
        residual_l2=residual,
        iterations=used,
        converged=converged,
    )


def recover_joint(
    per_tree_measurements,
    phi: SensingMatrix,
    psi: np.ndarray,
    epsilon: float,
    node_order=None,
    max_iter: int = MAX_ITERATIONS,
    tol: float = CONVERGENCE_TOL,
) -> RecoveryResult:
    """Joint decode of block-diagonal measurements against the full basis.

    node_order[j] gives the deployment index of block coordinate j, so the
    basis rows are permuted to the tree-by-tree numbering before solving.
    The estimate comes back in deployment order.
    """
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    v = np.concatenate([np.asarray(m, dtype=float).ravel() for m in per_tree_measurements])
    if phi.layout == BLOCK_DIAGONAL:
        sizes = [b[0] for b in phi.blocks]
        if len(per_tree_measurements) != len(sizes) or any(
            len(np.atleast_1d(m)) != s for m, s in zip(per_tree_measurements, sizes)
        ):
            raise ValueError("measurement blocks do not match the matrix layout")
    if v.shape != (phi.k,):
        raise ValueError("total measurement count does not match k")
    if node_order is None:
        node_order = np.arange(n)
    node_order = np.asarray(node_order, dtype=int)
    if sorted(node_order.tolist()) != list(range(n)):
        raise ValueError("node_order must be a permutation of the deployment ids")
    a = phi.matrix @ psi[node_order, :]
    w, residual, used, converged = _solve_l1(a, v, epsilon, max_iter, tol)
    return RecoveryResult(
        w_hat=w,
        u_hat=psi @ w,
        residual_l2=residual,
        iterations=used,
        converged=converged,
    )


def compute_energy_overlap(partition, psi: np.ndarray) -> float:
    """Max over (cluster, basis column) of the energy a column puts in a cluster."""
    psi = np.asarray(psi, dtype=float)
    n = psi.shape[0]
    seen = np.zeros(n, dtype=bool)
    total = 0
    mu = 0.0
    for cluster in partition:
        idx = np.asarray(list(cluster), dtype=int)
        if np.any(seen[idx]):
            raise ValueError("partition clusters overlap")
        seen[idx] = True
        total += len(idx)
        mu = max(mu, float(np.max(np.sum(psi[idx, :] ** 2, axis=0))))
    if total != n or not np.all(seen):
        raise ValueError("partition must cover all coordinates")
    return mu


def save_measurements_csv(per_tree_measurements, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tree_id", "row_index", "value"])
        for tree_id, block in enumerate(per_tree_measurements):
            for row_index, value in enumerate(np.atleast_1d(block)):
                writer.writerow([tree_id, row_index, "%.17g" % value])


def load_measurements_csv(path):
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tree_id", "row_index", "value"]:
            raise ValueError(f"unexpected measurements header: {header}")
        for row in reader:
            groups.setdefault(int(row[0]), []).append((int(row[1]), float(row[2])))
    out = []
    for tree_id in sorted(groups):
        rows = sorted(groups[tree_id])
        out.append(np.array([val for _, val in rows]))
    return out
