"""Linear feature maps over finite state spaces.

Approximation quality is not the point here; what the algorithms and their
diagnostics require is a full-column-rank matrix whose rows never exceed unit
norm (with the max row exactly at 1). Construction enforces both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient

_RANK_TOL = 1e-10


@dataclass(frozen=True)
class FeatureMap:
    """Feature matrix of shape (S, d) with unit max row norm.

    ``centers`` and ``bandwidth`` record how an RBF map was generated and stay
    None for handcrafted matrices. Construction raises RankDeficient when the
    smallest singular value is at or below 1e-10 and ValueError when the row
    norm contract (all <= 1, max == 1) is broken.
    """

    matrix: np.ndarray
    centers: np.ndarray | None = None
    bandwidth: float | None = None

    def __post_init__(self):
        matrix = np.ascontiguousarray(np.asarray(self.matrix, dtype=np.float64))
        object.__setattr__(self, "matrix", matrix)
        if matrix.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {matrix.shape}")
        num_states, dim = matrix.shape
        if dim > num_states:
            raise ValueError(
                f"more features ({dim}) than states ({num_states}) cannot be full rank"
            )
        singular_values = np.linalg.svd(matrix, compute_uv=False)
        if singular_values[-1] <= _RANK_TOL:
            raise RankDeficient(
                f"smallest singular value {singular_values[-1]:.3e} is at or below {_RANK_TOL}"
            )
        row_norms = np.linalg.norm(matrix, axis=1)
        if np.max(row_norms) > 1.0 + 1e-12 or abs(np.max(row_norms) - 1.0) > 1e-12:
            raise ValueError(
                f"row norms must all be <= 1 with max exactly 1, got max {np.max(row_norms)}"
            )
        matrix.setflags(write=False)
        if self.centers is not None:
            centers = np.asarray(self.centers, dtype=np.int64)
            centers.setflags(write=False)
            object.__setattr__(self, "centers", centers)

    @property
    def num_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def rbf_features(
    num_states: int,
    num_centers: int,
    bandwidth: float,
    seed: int = 0,
) -> FeatureMap:
    """Gaussian bumps over the state index line.

    Centers are ``num_centers`` distinct state indices drawn by ``seed``;
    entry (s, k) is exp(-(s - c_k)^2 / (2 bandwidth^2)). The whole matrix is
    then divided by its largest row norm, one global scale, so the max row
    norm is exactly 1 and relative feature geometry is untouched.
    """
    if num_centers < 1 or num_centers > num_states:
        raise ValueError(
            f"num_centers must be in [1, {num_states}], got {num_centers}"
        )
    if bandwidth <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    rng = np.random.default_rng(seed)
    centers = np.sort(rng.choice(num_states, size=num_centers, replace=False))
    states = np.arange(num_states, dtype=np.float64)
    sq_dist = (states[:, None] - centers[None, :].astype(np.float64)) ** 2
    matrix = np.exp(-sq_dist / (2.0 * bandwidth * bandwidth))
    row_norms = np.linalg.norm(matrix, axis=1)
    matrix /= row_norms.max()
    return FeatureMap(matrix=matrix, centers=centers, bandwidth=float(bandwidth))


@dataclass(frozen=True)
class FeatureDiagnostics:
    """Numbers a caller might gate on before running anything expensive."""

    max_row_norm: float
    min_singular_value: float
    gram_floor: float | None


def validate_features(
    features: FeatureMap, stationary: np.ndarray | None = None
) -> FeatureDiagnostics:
    """Report row-norm and rank margins, plus the weighted Gram floor.

    The Gram floor is the smallest eigenvalue of Phi^T diag(d) Phi under the
    supplied stationary distribution ``d``; it is the constant the
    convergence-rate diagnostics depend on. Without a distribution the
    uniform one stands in.
    """
    matrix = features.matrix
    singular_values = np.linalg.svd(matrix, compute_uv=False)
    if stationary is None:
        stationary = np.full(features.num_states, 1.0 / features.num_states)
    stationary = np.asarray(stationary, dtype=np.float64)
    gram = matrix.T @ (stationary[:, None] * matrix)
    gram_floor = float(np.linalg.eigvalsh(gram)[0])
    return FeatureDiagnostics(
        max_row_norm=float(np.linalg.norm(matrix, axis=1).max()),
        min_singular_value=float(singular_values[-1]),
        gram_floor=gram_floor,
    )
