"""Linear, Gaussian RBF and covariate-scaled RBF kernels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError

__all__ = [
    "KernelSpec",
    "kernel_value",
    "kernel_matrix",
    "kernel_eta_gradient",
    "median_heuristic",
    "squared_distances",
]

_KINDS = ("linear", "rbf", "scaled_rbf")


@dataclass(frozen=True)
class KernelSpec:
    """``rbf``: exp(-sigma^2 ||x-z||^2); ``scaled_rbf``: exp(-sum_j eta_j (x_j-z_j)^2)."""

    kind: str = "rbf"
    sigma: float | None = None
    eta: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "rbf":
            if self.sigma is None or not self.sigma > 0:
                raise ValueError(f"rbf kernel needs sigma > 0, got {self.sigma}")
        if self.kind == "scaled_rbf":
            if self.eta is None:
                raise ValueError("scaled_rbf kernel needs an eta vector")
            eta = tuple(float(e) for e in np.ravel(self.eta))
            if any(not e >= 0 for e in eta):
                raise ValueError("eta must be componentwise >= 0")
            object.__setattr__(self, "eta", eta)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "eta": list(self.eta) if self.eta is not None else None}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        eta = d.get("eta")
        return cls(d["kind"], d.get("sigma"), tuple(eta) if eta is not None else None)


def squared_distances(X, Z, scale=None) -> np.ndarray:
    """Pairwise ``sum_j scale_j (x_j - z_j)^2`` (unit scale when None)."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if scale is not None:
        s = np.sqrt(np.asarray(scale, dtype=float))
        X, Z = X * s, Z * s
    xx = np.einsum("ij,ij->i", X, X)
    zz = np.einsum("ij,ij->i", Z, Z)
    D = xx[:, None] + zz[None, :] - 2.0 * (X @ Z.T)
    np.maximum(D, 0.0, out=D)
    return D


def kernel_value(spec: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    if x.shape != z.shape:
        raise DataError(f"dimension mismatch: {x.shape[0]} vs {z.shape[0]}")
    if spec.kind == "linear":
        return float(x @ z)
    diff2 = (x - z) ** 2
    if spec.kind == "rbf":
        return float(np.exp(-spec.sigma**2 * diff2.sum()))
    eta = _eta_for(spec, x.shape[0])
    return float(np.exp(-(eta * diff2).sum()))


def _eta_for(spec: KernelSpec, p: int) -> np.ndarray:
    eta = np.asarray(spec.eta, dtype=float)
    if eta.shape[0] != p:
        raise DataError(f"eta has {eta.shape[0]} entries but data have {p} covariates")
    return eta


def kernel_matrix(spec: KernelSpec, X, Z=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    same = Z is None
    Z = X if same else np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise DataError(f"column mismatch: {X.shape[1]} vs {Z.shape[1]}")
    if spec.kind == "linear":
        K = X @ Z.T
    elif spec.kind == "rbf":
        K = np.exp(-(spec.sigma**2) * squared_distances(X, Z))
    else:
        K = np.exp(-squared_distances(X, Z, _eta_for(spec, X.shape[1])))
    if same:
        # exact symmetry; the expanded-square distance form is symmetric only to rounding
        K = 0.5 * (K + K.T)
        if spec.kind != "linear":
            np.fill_diagonal(K, 1.0)
    return K


def kernel_eta_gradient(spec: KernelSpec, X, Z=None) -> np.ndarray:
    """dK/d eta_j for every j, stacked as an array of shape (p, n, m)."""
    if spec.kind != "scaled_rbf":
        raise ValueError("eta gradients are defined for scaled_rbf kernels only")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = X if Z is None else np.atleast_2d(np.asarray(Z, dtype=float))
    K = kernel_matrix(spec, X, Z if Z is not X else None)
    diff2 = (X[:, None, :] - Z[None, :, :]) ** 2
    return -np.moveaxis(diff2, 2, 0) * K[None, :, :]


def median_heuristic(X, max_pairs: int = 1_000_000, seed=0) -> float:
    """sigma with 1/sigma^2 equal to the median squared pairwise distance.

    All pairs i < j are used when there are at most ``max_pairs`` of them,
    otherwise ``max_pairs`` pairs are drawn with a seeded generator.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if n < 2:
        raise DataError("median heuristic needs at least two points")
    if n * (n - 1) // 2 <= max_pairs:
        i, j = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_pairs)
        j = rng.integers(0, n - 1, size=max_pairs)
        j = j + (j >= i)
    d2 = ((X[i] - X[j]) ** 2).sum(axis=1)
    med = float(np.median(d2))
    if not med > 0:
        raise DataError("median pairwise distance is zero (points identical)")
    return 1.0 / np.sqrt(med)
