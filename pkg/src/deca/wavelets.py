"""Diffusion wavelet bases on sensor graphs.

The correlation graph is complete: pairwise weights d^alpha with a self
weight beta, normalized into a Laplacian whose diffusion operator is split
into dyadic frequency bands by eigenvalue thresholding. Joint space-time
bases replicate the graph over rounds with an increasing coupling g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

I_MINUS_LAMBDA = "I_MINUS_LAMBDA"
LAMBDA_OVER_2 = "LAMBDA_OVER_2"

DEFAULT_GAMMA = 4
DEFAULT_THRESHOLD = 1e-3

# Empirically sigma_max(Lambda) can exceed 1 by a few percent at the default
# beta, while both operator choices are still usable after clipping, so the
# rejection tolerance is an order of magnitude wider than that excess.
DEFAULT_SPECTRUM_TOL = 0.15


class SpectrumError(RuntimeError):
    """Operator spectrum leaves [0, 1] by more than the allowed tolerance."""


@dataclass(frozen=True)
class LaplacianSpec:
    alpha: float = -1.0
    beta: float = 1.0
    operator_kind: str = I_MINUS_LAMBDA

    def __post_init__(self):
        if not self.alpha < 0:
            raise ValueError("alpha must be negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.operator_kind not in (I_MINUS_LAMBDA, LAMBDA_OVER_2):
            raise ValueError(f"unknown operator kind {self.operator_kind!r}")


@dataclass(frozen=True)
class TemporalCoupling:
    """Round-to-round coupling strength g(x) = exp(rate * (x + 1))."""

    rounds: int
    rate: float = 0.5

    def __post_init__(self):
        if self.rounds < 2:
            raise ValueError("temporal coupling needs at least 2 rounds")
        if self.rate < 0:
            raise ValueError("rate must be non-negative")

    def g(self, x: float) -> float:
        return math.exp(self.rate * (x + 1))


@dataclass(frozen=True)
class DiffusionBasis:
    """Orthonormal N x N basis, columns ordered high frequency first.

    level_boundaries has gamma + 2 entries; columns in
    [level_boundaries[j-1], level_boundaries[j]) span V_j for j = 1..gamma,
    and the final range spans U_gamma.
    """

    dimension: int
    basis_matrix: np.ndarray
    eigenvalues: np.ndarray
    level_boundaries: tuple
    gamma: int
    threshold: float

    def level_sizes(self):
        b = self.level_boundaries
        return tuple(b[i + 1] - b[i] for i in range(len(b) - 1))


def build_adjacency(positions, spec: LaplacianSpec) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    n = len(positions)
    if n < 2:
        raise ValueError("need at least two nodes")
    d = pdist(positions)
    if np.any(d <= 0):
        raise ValueError("coincident nodes have no finite distance weight")
    omega = squareform(d ** spec.alpha)
    np.fill_diagonal(omega, spec.beta)
    return omega


def build_normalized_laplacian(omega: np.ndarray, beta: float) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if not np.allclose(omega, omega.T):
        raise ValueError("adjacency must be symmetric")
    deg = omega.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("zero-degree node")
    inv_sqrt = 1.0 / np.sqrt(deg)
    lam = -omega * np.outer(inv_sqrt, inv_sqrt)
    np.fill_diagonal(lam, 1.0 - beta / deg)
    return lam


def build_operator(
    lam: np.ndarray, kind: str = I_MINUS_LAMBDA, spectrum_tol: float = DEFAULT_SPECTRUM_TOL
) -> np.ndarray:
    if kind == I_MINUS_LAMBDA:
        op = np.eye(len(lam)) - lam
    elif kind == LAMBDA_OVER_2:
        op = lam / 2.0
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    eig = np.linalg.eigvalsh(op)
    if eig[0] < -spectrum_tol or eig[-1] > 1.0 + spectrum_tol:
        raise SpectrumError(
            f"operator eigenvalues span [{eig[0]:.6g}, {eig[-1]:.6g}], "
            f"outside [0,1] by more than {spectrum_tol}"
        )
    return op


def _split_levels(eigvals, eigvecs, gamma, threshold):
    """Band the ascending eigendecomposition into V_1..V_gamma, U_gamma."""
    s = np.clip(eigvals, 0.0, 1.0)
    # s^(2^j) >= threshold  <=>  s >= threshold^(2^-j)
    cuts = [threshold ** (0.5 ** j) for j in range(1, gamma + 1)]
    boundaries = [0]
    for c in cuts:
        boundaries.append(int(np.searchsorted(s, c, side="left")))
    boundaries.append(len(s))
    if any(b2 < b1 for b1, b2 in zip(boundaries, boundaries[1:])):
        raise AssertionError("eigenvalue bands out of order")
    return DiffusionBasis(
        dimension=len(s),
        basis_matrix=eigvecs,
        eigenvalues=np.asarray(eigvals, dtype=float),
        level_boundaries=tuple(boundaries),
        gamma=gamma,
        threshold=threshold,
    )


def build_basis(
    op: np.ndarray, gamma: int = DEFAULT_GAMMA, threshold: float = DEFAULT_THRESHOLD
) -> DiffusionBasis:
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    eigvals, eigvecs = np.linalg.eigh(np.asarray(op, dtype=float))
    return _split_levels(eigvals, eigvecs, gamma, threshold)


def build_spatiotemporal_adjacency(
    omega: np.ndarray, coupling: TemporalCoupling
) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    rounds = coupling.rounds
    big = np.empty((n * rounds, n * rounds))
    for r1 in range(rounds):
        for r2 in range(rounds):
            scale = 1.0 if r1 == r2 else coupling.g(abs(r1 - r2))
            big[r1 * n : (r1 + 1) * n, r2 * n : (r2 + 1) * n] = scale * omega
    return (big + big.T) / 2.0


def basis_from_positions(
    positions,
    spec: LaplacianSpec = LaplacianSpec(),
    gamma: int = DEFAULT_GAMMA,
    threshold: float = DEFAULT_THRESHOLD,
    coupling: TemporalCoupling | None = None,
    spectrum_tol: float = DEFAULT_SPECTRUM_TOL,
) -> DiffusionBasis:
    """Full pipeline with a single eigendecomposition.

    The spectrum check reuses the basis eigendecomposition instead of the
    separate eigvalsh pass build_operator would run.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie in (0, 1)")
    omega = build_adjacency(positions, spec)
    if coupling is not None:
        omega = build_spatiotemporal_adjacency(omega, coupling)
    lam = build_normalized_laplacian(omega, spec.beta)
    if spec.operator_kind == I_MINUS_LAMBDA:
        op = np.eye(len(lam)) - lam
    else:
        op = lam / 2.0
    eigvals, eigvecs = np.linalg.eigh(op)
    if eigvals[0] < -spectrum_tol or eigvals[-1] > 1.0 + spectrum_tol:
        raise SpectrumError(
            f"operator eigenvalues span [{eigvals[0]:.6g}, {eigvals[-1]:.6g}], "
            f"outside [0,1] by more than {spectrum_tol}"
        )
    return _split_levels(eigvals, eigvecs, gamma, threshold)


def save_basis_npz(path, basis: DiffusionBasis, spec: LaplacianSpec) -> None:
    np.savez(
        path,
        psi=basis.basis_matrix,
        eigenvalues=basis.eigenvalues,
        level_boundaries=np.asarray(basis.level_boundaries, dtype=int),
        header=np.array(
            [basis.dimension, basis.gamma, basis.threshold, spec.alpha, spec.beta],
            dtype=float,
        ),
        kind=np.array(spec.operator_kind),
    )


def load_basis_npz(path, expect: LaplacianSpec | None = None) -> DiffusionBasis:
    with np.load(path) as data:
        header = data["header"]
        kind = str(data["kind"])
        basis = DiffusionBasis(
            dimension=int(header[0]),
            basis_matrix=data["psi"],
            eigenvalues=data["eigenvalues"],
            level_boundaries=tuple(int(b) for b in data["level_boundaries"]),
            gamma=int(header[1]),
            threshold=float(header[2]),
        )
    if expect is not None:
        if (
            header[3] != expect.alpha
            or header[4] != expect.beta
            or kind != expect.operator_kind
        ):
            raise ValueError("cached basis was built with different parameters")
    return basis
