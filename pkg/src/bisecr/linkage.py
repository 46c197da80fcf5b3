"""Zero-augmentation of the observed data and the latent identity permutation.

The observed rows are embedded into M x K x J arrays:

    true index:   0 .. n_full-1        anchored rows (both flanks together)
                  n_full .. +n_L-1     left-only rows (left flank content)
                  next n_R indices     initially paired with the right-only
                                       slots below (identity start)
                  remainder            all-zero pseudo-individuals

    detector-2 slots mirror the same layout; right-only histories sit at
    slots n_full+n_L .. n_full+n_L+n_R-1.

L[j] gives the true index currently assigned to detector-2 slot j.  Swapping
the targets of two non-anchored slots is the elementary linkage move.  A
pairing is feasible when the observed sexes do not conflict and the two
flank histories never co-occur at the same trap and occasion (a co-occurring
pair would have been recorded as one anchored row in the field).

Because feasible pairings never overlap within a trap-occasion cell, the
combined sufficient statistics of a non-anchored row are simply the sums of
the per-side statistics, which makes linkage moves O(K).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import UNKNOWN, CaptureData, RowKind, SufficientStats


@dataclass
class AugmentedData:
    """Observed histories zero-padded to M rows plus per-row metadata."""

    M: int
    J: int
    left: np.ndarray         # (M, K, J) uint8, indexed by true individual
    right: np.ndarray        # (M, K, J) uint8, indexed by detector-2 slot
    left_kind: np.ndarray    # (M,) RowKind of the left-side content
    right_kind: np.ndarray   # (M,) RowKind of each detector-2 slot
    sex_left: np.ndarray     # (M,) observed sex attached to the left content
    sex_right: np.ndarray    # (M,) observed sex attached to each slot

    @property
    def K(self) -> int:
        return self.left.shape[1]

    @property
    def n_anchored(self) -> int:
        return int(np.sum(self.left_kind == RowKind.FULL))

    @property
    def n_left_only(self) -> int:
        return int(np.sum(self.left_kind == RowKind.LEFT_ONLY))

    @property
    def n_right_only(self) -> int:
        return int(np.sum(self.right_kind == RowKind.RIGHT_ONLY))

    @property
    def row_kind(self) -> np.ndarray:
        """Combined per-row classification (valid for the canonical layout)."""
        kind = np.full(self.M, RowKind.ALL_ZERO, dtype=np.int8)
        kind[self.left_kind == RowKind.FULL] = RowKind.FULL
        kind[self.left_kind == RowKind.LEFT_ONLY] = RowKind.LEFT_ONLY
        kind[self.right_kind == RowKind.RIGHT_ONLY] = RowKind.RIGHT_ONLY
        return kind


def augment(data: CaptureData, M: int) -> tuple[AugmentedData, np.ndarray]:
    """Embed observed rows into M-row arrays and return the initial permutation.

    The start is the "all partial histories are distinct animals" assignment:
    every right-only slot pairs with a fresh all-zero left index, so the
    initial L is the identity.  Raises if M cannot host all observed rows.
    """
    n_full = data.n_full
    n_l = data.n_left_only
    n_r = data.n_right_only
    need = n_full + n_l + n_r
    if M < need:
        raise ValueError(
            f"augmentation bound M={M} too small for {need} observed rows"
        )
    K, J = data.K, data.J
    left = np.zeros((M, K, J), dtype=np.uint8)
    right = np.zeros((M, K, J), dtype=np.uint8)
    left_kind = np.full(M, RowKind.ALL_ZERO, dtype=np.int8)
    right_kind = np.full(M, RowKind.ALL_ZERO, dtype=np.int8)
    sex_left = np.full(M, UNKNOWN, dtype=np.int8)
    sex_right = np.full(M, UNKNOWN, dtype=np.int8)

    full_rows = np.flatnonzero(data.row_kind == RowKind.FULL)
    left_rows = np.flatnonzero(data.row_kind == RowKind.LEFT_ONLY)
    right_rows = np.flatnonzero(data.row_kind == RowKind.RIGHT_ONLY)

    left[:n_full] = data.left[full_rows]
    right[:n_full] = data.right[full_rows]
    left_kind[:n_full] = RowKind.FULL
    right_kind[:n_full] = RowKind.FULL
    sex_left[:n_full] = data.sex[full_rows]

    left[n_full:n_full + n_l] = data.left[left_rows]
    left_kind[n_full:n_full + n_l] = RowKind.LEFT_ONLY
    sex_left[n_full:n_full + n_l] = data.sex[left_rows]

    lo = n_full + n_l
    right[lo:lo + n_r] = data.right[right_rows]
    right_kind[lo:lo + n_r] = RowKind.RIGHT_ONLY
    sex_right[lo:lo + n_r] = data.sex[right_rows]

    aug = AugmentedData(M=M, J=J, left=left, right=right,
                        left_kind=left_kind, right_kind=right_kind,
                        sex_left=sex_left, sex_right=sex_right)
    return aug, np.arange(M, dtype=np.int64)


def apply_permutation(right: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Reorder detector-2 rows so that output row L[j] is input row j."""
    L = np.asarray(L)
    M = right.shape[0]
    if L.shape != (M,) or not np.array_equal(np.sort(L), np.arange(M)):
        raise ValueError("L is not a permutation of 0..M-1")
    return right[np.argsort(L)]


def merge_feasible(left_row: np.ndarray, right_row: np.ndarray,
                   sex_left: int, sex_right: int) -> bool:
    """Whether a left-side row and a right-side row may belong to one animal.

    False on a Male/Female conflict (UNKNOWN matches anything) and on any
    trap-occasion cell where both flanks were detected: such a pair would
    have been observed simultaneously and hence arrived fully identified.
    """
    if sex_left != UNKNOWN and sex_right != UNKNOWN and sex_left != sex_right:
        return False
    return not bool(np.any((np.asarray(left_row) > 0) & (np.asarray(right_row) > 0)))


def combine_observed_sex(sex_left: int, sex_right: int) -> int:
    """Observed sex of a merged pair; raises on a hard conflict."""
    if sex_left == UNKNOWN:
        return int(sex_right)
    if sex_right == UNKNOWN or sex_right == sex_left:
        return int(sex_left)
    raise ValueError("merged rows carry contradictory observed sexes")


class LinkageState:
    """Permutation L plus incrementally maintained sufficient statistics.

    Combined per-row arrays (indexed by true individual):

        n      (M, K)  occasions with >= 1 detection at each trap
        m      (M, K)  total flank detections at each trap
        n_dot  (M,)    row sums of n
        y1, y2 (M,)    per-flank totals;  y_tot = y1 + y2
        detected (M,)  bool, any detection under the current linkage
        pinned_sex (M,)  observed sex forced on the row, UNKNOWN if free

    Anchored rows are computed exactly once from their raw histories (their
    flanks may legitimately co-occur).  Non-anchored rows use the additive
    decomposition, which feasibility makes exact.
    """

    def __init__(self, aug: AugmentedData, L: np.ndarray | None = None):
        self.aug = aug
        M, K = aug.M, aug.K
        self.L = np.arange(M, dtype=np.int64) if L is None else np.asarray(L, dtype=np.int64).copy()
        self.L_inv = np.argsort(self.L)

        self._nL = (aug.left > 0).sum(axis=2).astype(np.int64)
        self._mL = aug.left.sum(axis=2, dtype=np.int64)
        self._y1 = aug.left.sum(axis=(1, 2), dtype=np.int64)
        self._nR = (aug.right > 0).sum(axis=2).astype(np.int64)
        self._mR = aug.right.sum(axis=2, dtype=np.int64)
        self._y2 = aug.right.sum(axis=(1, 2), dtype=np.int64)

        self.n = np.zeros((M, K), dtype=np.int64)
        self.m = np.zeros((M, K), dtype=np.int64)
        self.y1 = np.zeros(M, dtype=np.int64)
        self.y2 = np.zeros(M, dtype=np.int64)
        self.pinned_sex = np.full(M, UNKNOWN, dtype=np.int8)

        self._anchored = np.flatnonzero(aug.left_kind == RowKind.FULL)
        anchored_mask = np.zeros(M, dtype=bool)
        anchored_mask[self._anchored] = True
        self._anchored_mask = anchored_mask
        self.movable_slots = np.flatnonzero(aug.right_kind != RowKind.FULL)
        self.partial_slots = np.flatnonzero(aug.right_kind == RowKind.RIGHT_ONLY)

        # feasibility of (right-only slot, target) pairs is a function of the
        # fixed row contents and observed sexes, so it is tabulated once
        self._slot_pos = {int(j): r for r, j in enumerate(self.partial_slots)}
        self._slot_row = np.full(M, -1, dtype=np.int64)
        self._slot_row[self.partial_slots] = np.arange(self.partial_slots.size)
        self._feas = np.zeros((self.partial_slots.size, M), dtype=bool)
        left_rows = np.flatnonzero(aug.left_kind == RowKind.LEFT_ONLY)
        for r, j in enumerate(self.partial_slots):
            ok = ~anchored_mask
            sex_j = aug.sex_right[j]
            if sex_j != UNKNOWN:
                ok = ok & ((aug.sex_left == UNKNOWN) | (aug.sex_left == sex_j))
            if left_rows.size:
                overlap = np.any((aug.left[left_rows] > 0) & (aug.right[j] > 0),
                                 axis=(1, 2))
                ok[left_rows[overlap]] = False
            self._feas[r] = ok

        for i in self._anchored:
            either = (aug.left[i] > 0) | (aug.right[i] > 0)
            self.n[i] = either.sum(axis=1)
            self.m[i] = self._mL[i] + self._mR[i]
            self.y1[i] = self._y1[i]
            self.y2[i] = self._y2[i]
            self.pinned_sex[i] = combine_observed_sex(aug.sex_left[i], aug.sex_right[i])
        free = np.flatnonzero(~anchored_mask)
        self._refresh_rows(free)

    # -- derived views ---------------------------------------------------

    @property
    def n_dot(self) -> np.ndarray:
        return self.n.sum(axis=1)

    @property
    def y_tot(self) -> np.ndarray:
        return self.y1 + self.y2

    @property
    def detected(self) -> np.ndarray:
        return self.y_tot > 0

    def row_stats(self, i: int) -> SufficientStats:
        return SufficientStats(n_k=self.n[i].copy(), m_k=self.m[i].copy(),
                               y1_tot=int(self.y1[i]), y2_tot=int(self.y2[i]))

    # -- maintenance -----------------------------------------------------

    def _refresh_rows(self, rows) -> None:
        rows = np.asarray(rows, dtype=np.int64)
        slots = self.L_inv[rows]
        self.n[rows] = self._nL[rows] + self._nR[slots]
        self.m[rows] = self._mL[rows] + self._mR[slots]
        self.y1[rows] = self._y1[rows]
        self.y2[rows] = self._y2[slots]
        for i, j in zip(rows, slots):
            self.pinned_sex[i] = combine_observed_sex(
                self.aug.sex_left[i], self.aug.sex_right[j]
            )

    def pair_feasible(self, slot: int, target: int) -> bool:
        """Feasibility of assigning detector-2 slot to a true index."""
        aug = self.aug
        if aug.right_kind[slot] == RowKind.FULL or self._anchored_mask[target]:
            return bool(slot == target)
        if aug.right_kind[slot] != RowKind.RIGHT_ONLY:
            return True
        return bool(self._feas[self._slot_pos[int(slot)], target])

    def swap_feasible(self, j1: int, j2: int) -> bool:
        """O(1) feasibility of trading the targets of two movable slots."""
        a, b = self.L[j1], self.L[j2]
        r1, r2 = self._slot_row[j1], self._slot_row[j2]
        if r1 >= 0 and not self._feas[r1, b]:
            return False
        if r2 >= 0 and not self._feas[r2, a]:
            return False
        return True

    def stats_after_swap(self, j1: int, j2: int):
        """Stats of the two affected rows if slots j1, j2 traded targets.

        Pure: the state is not modified.  Returns (a, stats_a, b, stats_b)
        where a = L[j1] and b = L[j2] are the affected true indices.
        Raises if the swap is infeasible or touches an anchored row.
        """
        if not self.swap_feasible(j1, j2):
            raise ValueError(f"infeasible swap of slots {j1} and {j2}")
        a, b = int(self.L[j1]), int(self.L[j2])
        stats_a = SufficientStats(
            n_k=self._nL[a] + self._nR[j2], m_k=self._mL[a] + self._mR[j2],
            y1_tot=int(self._y1[a]), y2_tot=int(self._y2[j2]),
        )
        stats_b = SufficientStats(
            n_k=self._nL[b] + self._nR[j1], m_k=self._mL[b] + self._mR[j1],
            y1_tot=int(self._y1[b]), y2_tot=int(self._y2[j1]),
        )
        return a, stats_a, b, stats_b

    def apply_swap(self, j1: int, j2: int) -> tuple[int, int]:
        """Trade the targets of slots j1 and j2; returns the affected rows."""
        a, b = int(self.L[j1]), int(self.L[j2])
        self.L[j1], self.L[j2] = b, a
        self.L_inv[a], self.L_inv[b] = j2, j1
        self._refresh_rows([a, b])
        return a, b

    def check_invariants(self) -> None:
        """Structural sanity: bijection, anchored block fixed, feasible pairs."""
        M = self.aug.M
        if not np.array_equal(np.sort(self.L), np.arange(M)):
            raise AssertionError("L is not a bijection")
        if not np.array_equal(self.L[self._anchored], self._anchored):
            raise AssertionError("anchored rows moved under L")
        if not np.array_equal(self.L[self.L_inv], np.arange(M)):
            raise AssertionError("L_inv out of sync")
        for j in self.partial_slots:
            if not self.pair_feasible(j, int(self.L[j])):
                raise AssertionError(f"infeasible pairing at slot {j}")
        recomputed = recompute_stats(self.aug, self.L)
        for name in ("n", "m", "y1", "y2"):
            if not np.array_equal(getattr(self, name), recomputed[name]):
                raise AssertionError(f"incremental stats drifted: {name}")


def recompute_stats(aug: AugmentedData, L: np.ndarray) -> dict:
    """From-scratch sufficient statistics under a permutation (oracle path)."""
    right_star = apply_permutation(aug.right, L)
    either = (aug.left > 0) | (right_star > 0)
    return {
        "n": either.sum(axis=2).astype(np.int64),
        "m": (aug.left.sum(axis=2) + right_star.sum(axis=2)).astype(np.int64),
        "y1": aug.left.sum(axis=(1, 2), dtype=np.int64),
        "y2": right_star.sum(axis=(1, 2), dtype=np.int64),
    }
