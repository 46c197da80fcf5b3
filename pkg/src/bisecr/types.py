"""Core data containers for the dual-detector spatial capture-recapture model.

Conventions used throughout the package:

- Detection histories are binary arrays of shape (rows, K, J): rows of
  individuals, K trap stations, J sampling occasions.
- "Left" and "right" refer to the two co-located detectors at each station
  (e.g. the two cameras photographing opposite flanks of an animal).
- Sex is encoded as an int8: 1 = male, 0 = female, -1 = unknown.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

MALE = 1
FEMALE = 0
UNKNOWN = -1


class RowKind(IntEnum):
    """Classification of an observed or augmented capture-history row."""

    FULL = 0        # identity anchored: both flanks known to belong together
    LEFT_ONLY = 1   # left-flank history with no right-flank match
    RIGHT_ONLY = 2  # right-flank history with no left-flank match
    ALL_ZERO = 3    # augmented pseudo-individual, no detections


@dataclass(frozen=True)
class StateSpace:
    """Rectangular region assumed to contain every activity centre."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError(
                f"degenerate state space: x [{self.xmin}, {self.xmax}], "
                f"y [{self.ymin}, {self.ymax}]"
            )

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask for points (..., 2) lying inside the rectangle."""
        p = np.asarray(points, dtype=float)
        return (
            (p[..., 0] >= self.xmin)
            & (p[..., 0] <= self.xmax)
            & (p[..., 1] >= self.ymin)
            & (p[..., 1] <= self.ymax)
        )

    def grid(self, nx: int, ny: int) -> np.ndarray:
        """Regular (nx*ny, 2) grid of cell centres covering the rectangle."""
        xs = self.xmin + (np.arange(nx) + 0.5) * (self.xmax - self.xmin) / nx
        ys = self.ymin + (np.arange(ny) + 0.5) * (self.ymax - self.ymin) / ny
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True)
class TrapArray:
    """Ordered array of K dual-detector stations.

    ``coords`` has shape (K, 2).  ``labels`` keeps the external station ids
    (e.g. from a CSV file); internally stations are addressed by position
    0..K-1 in label-sorted order.
    """

    coords: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or coords.shape[0] < 1:
            raise ValueError(f"trap coordinates must be (K, 2), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("non-finite trap coordinate")
        object.__setattr__(self, "coords", coords)
        labels = self.labels
        if labels is None:
            labels = np.arange(coords.shape[0])
        labels = np.asarray(labels)
        if len(np.unique(labels)) != coords.shape[0]:
            raise ValueError("duplicate trap labels")
        object.__setattr__(self, "labels", labels)

    @property
    def K(self) -> int:
        return self.coords.shape[0]

    def validate_inside(self, space: StateSpace) -> None:
        if not np.all(space.contains(self.coords)):
            raise ValueError("trap station outside the state space")

    def bounding_space(self, buffer: float) -> StateSpace:
        """State space built as the trap bounding box plus a buffer."""
        if buffer <= 0:
            raise ValueError("buffer must be positive")
        x, y = self.coords[:, 0], self.coords[:, 1]
        return StateSpace(
            x.min() - buffer, x.max() + buffer, y.min() - buffer, y.max() + buffer
        )


@dataclass
class CaptureData:
    """Observed detection histories, one row per (partially) identified animal.

    FULL rows carry both flank histories and contain at least one occasion
    where both detectors fired at the same station (which is what anchors
    the identity).  LEFT_ONLY / RIGHT_ONLY rows carry one flank only; their
    opposite-flank slice is all zero.
    """

    J: int
    left: np.ndarray        # (rows, K, J) uint8
    right: np.ndarray       # (rows, K, J) uint8
    row_kind: np.ndarray    # (rows,) RowKind values
    sex: np.ndarray         # (rows,) int8, MALE / FEMALE / UNKNOWN

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=np.uint8)
        self.right = np.asarray(self.right, dtype=np.uint8)
        self.row_kind = np.asarray(self.row_kind, dtype=np.int8)
        self.sex = np.asarray(self.sex, dtype=np.int8)
        if self.left.shape != self.right.shape or self.left.ndim != 3:
            raise ValueError("left/right arrays must share shape (rows, K, J)")
        if self.left.shape[2] != self.J:
            raise ValueError(f"arrays have {self.left.shape[2]} occasions, J={self.J}")
        if self.left.max(initial=0) > 1 or self.right.max(initial=0) > 1:
            raise ValueError("detection histories must be binary")
        for r, kind in enumerate(self.row_kind):
            l, rt = self.left[r], self.right[r]
            if kind == RowKind.FULL:
                if not np.any((l > 0) & (rt > 0)):
                    raise ValueError(f"row {r}: FULL row lacks a simultaneous cell")
            elif kind == RowKind.LEFT_ONLY:
                if rt.any() or not l.any():
                    raise ValueError(f"row {r}: malformed LEFT_ONLY row")
            elif kind == RowKind.RIGHT_ONLY:
                if l.any() or not rt.any():
                    raise ValueError(f"row {r}: malformed RIGHT_ONLY row")
            else:
                raise ValueError(f"row {r}: invalid kind {kind} for observed data")

    @property
    def n_rows(self) -> int:
        return self.left.shape[0]

    @property
    def K(self) -> int:
        return self.left.shape[1]

    @property
    def n_full(self) -> int:
        return int(np.sum(self.row_kind == RowKind.FULL))

    @property
    def n_left_only(self) -> int:
        return int(np.sum(self.row_kind == RowKind.LEFT_ONLY))

    @property
    def n_right_only(self) -> int:
        return int(np.sum(self.row_kind == RowKind.RIGHT_ONLY))


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the entry/detection model.

    psi     inclusion probability of a pseudo-individual (N ~ Binomial(M, psi))
    theta   probability that an individual is male
    phi     per-detector detection probability given trap entry
    p0      baseline trap entry probability at distance zero
    sigma_m, sigma_f   movement scales for males / females
    R       upper bound of the uniform priors on the sigmas
    """

    psi: float
    theta: float
    phi: float
    p0: float
    sigma_m: float
    sigma_f: float
    R: float = np.inf

    def in_support(self) -> bool:
        probs = (self.psi, self.theta, self.phi, self.p0)
        if not all(0.0 < p < 1.0 for p in probs):
            return False
        return 0.0 < self.sigma_m < self.R and 0.0 < self.sigma_f < self.R

    def sigma(self, x: int) -> float:
        return self.sigma_m if x == MALE else self.sigma_f


@dataclass(frozen=True)
class ReducedParams:
    """Single-layer variant: detectors fire directly with rate lambda0."""

    psi: float
    theta: float
    lambda0: float
    sigma_m: float
    sigma_f: float
    R: float = np.inf

    def in_support(self) -> bool:
        probs = (self.psi, self.theta, self.lambda0)
        if not all(0.0 < p < 1.0 for p in probs):
            return False
        return 0.0 < self.sigma_m < self.R and 0.0 < self.sigma_f < self.R

    def sigma(self, x: int) -> float:
        return self.sigma_m if x == MALE else self.sigma_f


@dataclass(frozen=True)
class CellProbs:
    """Joint distribution of the two detector outcomes at one trap-occasion."""

    p00: float
    p10: float
    p01: float
    p11: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p00, self.p10, self.p01, self.p11])

    def total(self) -> float:
        return self.p00 + self.p10 + self.p01 + self.p11


@dataclass
class SufficientStats:
    """Per-individual summaries that the likelihood depends on.

    n_k[k]   occasions with >= 1 detection (either flank) at trap k
    m_k[k]   total flank detections at trap k (left + right, over occasions)
    y1_tot   total left-flank detections
    y2_tot   total right-flank detections (after identity alignment)
    """

    n_k: np.ndarray
    m_k: np.ndarray
    y1_tot: int
    y2_tot: int

    @property
    def n_dot(self) -> int:
        return int(self.n_k.sum())

    @property
    def y_tot(self) -> int:
        return self.y1_tot + self.y2_tot

    @property
    def detected(self) -> bool:
        return self.y_tot > 0


@dataclass
class AugmentedState:
    """Latent state of the augmented model: (z, x, s, L) for M pseudo-individuals.

    L maps detector-2 row slots to true individual indices (a permutation of
    0..M-1, fixed to the identity on identity-anchored rows).
    """

    z: np.ndarray            # (M,) int8 inclusion indicators
    x: np.ndarray            # (M,) int8 sex indicators (1 male, 0 female)
    s: np.ndarray            # (M, 2) activity centres
    L: np.ndarray            # (M,) permutation, slot -> true index

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.int8)
        self.x = np.asarray(self.x, dtype=np.int8)
        self.s = np.asarray(self.s, dtype=float)
        self.L = np.asarray(self.L, dtype=np.int64)

    @property
    def M(self) -> int:
        return self.z.shape[0]

    def copy(self) -> "AugmentedState":
        return AugmentedState(self.z.copy(), self.x.copy(), self.s.copy(), self.L.copy())
