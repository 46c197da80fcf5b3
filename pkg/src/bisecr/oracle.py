"""Brute-force evaluators for validating the model and sampler on tiny inputs.

Everything here is deliberately written from first principles (explicit
sums over latent outcomes, per-cell probability products) rather than via
the collapsed likelihood in bisecr.model, so the two code paths check each
other.  None of it is meant to scale beyond toy instances.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .linkage import AugmentedData
from .types import FEMALE, MALE, UNKNOWN, CaptureData, RowKind, TrapArray


def _cell_prob(y1: int, y2: int, pi: float, phi: float) -> float:
    """P(y1, y2) at one trap-occasion, summing over the latent entry event."""
    # entry happened: each detector fires independently with phi
    p_given_entry = (phi if y1 else 1.0 - phi) * (phi if y2 else 1.0 - phi)
    p = pi * p_given_entry
    if y1 == 0 and y2 == 0:
        p += 1.0 - pi
    return p


def _cell_prob_direct(y1: int, y2: int, p: float) -> float:
    """Single-layer variant: each detector fires directly with rate p."""
    return (p if y1 else 1.0 - p) * (p if y2 else 1.0 - p)


def enumerate_cell_distribution(pi: float, phi: float, J: int) -> dict:
    """Exact distribution of (n_detected, y1_tot, y2_tot) over J occasions.

    Sums the probabilities of all 4^J outcome sequences at a single trap.
    Bounded to J <= 10.
    """
    if J > 10:
        raise ValueError(f"J={J} exceeds the enumeration bound of 10")
    outcomes = [(0, 0), (1, 0), (0, 1), (1, 1)]
    probs = [_cell_prob(y1, y2, pi, phi) for (y1, y2) in outcomes]
    table: dict[tuple[int, int, int], float] = {}
    for seq in itertools.product(range(4), repeat=J):
        p = 1.0
        n = y1 = y2 = 0
        for o in seq:
            p *= probs[o]
            a, b = outcomes[o]
            n += 1 if (a + b) > 0 else 0
            y1 += a
            y2 += b
        key = (n, y1, y2)
        table[key] = table.get(key, 0.0) + p
    return table


def feasible_permutations(aug: AugmentedData) -> list[np.ndarray]:
    """All permutations L with anchored slots fixed and feasible pairings."""
    from .linkage import merge_feasible

    M = aug.M
    anchored = aug.right_kind == RowKind.FULL
    movable_slots = np.flatnonzero(~anchored)
    movable_targets = np.flatnonzero(aug.left_kind != RowKind.FULL)
    if len(movable_slots) != len(movable_targets):
        raise ValueError("anchored slots and anchored targets do not align")
    result = []
    for assign in itertools.permutations(movable_targets):
        L = np.arange(M, dtype=np.int64)
        L[movable_slots] = assign
        ok = True
        for j in movable_slots:
            if aug.right_kind[j] != RowKind.RIGHT_ONLY:
                continue
            i = L[j]
            if not merge_feasible(aug.left[i], aug.right[j],
                                  aug.sex_left[i], aug.sex_right[j]):
                ok = False
                break
        if ok:
            result.append(L)
    return result


@dataclass
class JointEnumeration:
    """Exact posterior summaries over (z, x, L) with gridded activity centres."""

    mass: float                      # unnormalised total (sanity: > 0)
    p_z: np.ndarray                  # (M,) P(z_i = 1)
    p_x: np.ndarray                  # (M,) P(x_i = 1)
    p_link: np.ndarray               # (M, M) P(slot j assigned to true index i)
    link_probs: dict = field(default_factory=dict)   # tuple(L) -> probability
    state_log_kernel: dict | None = None  # (z, x, L, s_idx) -> log kernel

    def p_merged(self, slot: int, target: int) -> float:
        return float(self.p_link[slot, target])


def _row_log_lik_given(left_row, right_row, s, sigma, base, phi, traps, J,
                       reduced: bool) -> float:
    """Log P(row | included), direct product over every trap-occasion cell."""
    total = 0.0
    for k in range(traps.K):
        d2 = float((s[0] - traps.coords[k, 0]) ** 2 + (s[1] - traps.coords[k, 1]) ** 2)
        rate = base * math.exp(-d2 / (2.0 * sigma * sigma))
        for t in range(J):
            y1, y2 = int(left_row[k, t]), int(right_row[k, t])
            p = (_cell_prob_direct(y1, y2, rate) if reduced
                 else _cell_prob(y1, y2, rate, phi))
            if p <= 0.0:
                return float("-inf")
            total += math.log(p)
    return total


def enumerate_joint(aug: AugmentedData, traps: TrapArray, params,
                    s_grid: np.ndarray, keep_states: bool = False) -> JointEnumeration:
    """Exact posterior over (z, x, L) with activity centres on a finite grid.

    The kernel factorises over individuals given L, so each row's grid sum
    is computed independently and only the (z, x) tables are combined per
    permutation.  With keep_states=True the full unnormalised log kernel is
    also recorded per (z, x, L, s-index) state; only use that on instances
    of a handful of rows.
    """
    M, K, J = aug.M, aug.K, aug.J
    s_grid = np.asarray(s_grid, dtype=float)
    G = s_grid.shape[0]
    if M > 6 or K * J > 16 or G > 25:
        raise ValueError(f"instance too large to enumerate: M={M}, K*J={K * J}, G={G}")
    psi, theta = params.psi, params.theta
    reduced = hasattr(params, "lambda0")
    base = params.lambda0 if reduced else params.p0
    phi = None if reduced else params.phi

    perms = feasible_permutations(aug)
    if not perms:
        raise ValueError("no feasible permutation for this instance")

    def row_tables(L):
        """Per row: lik[x][g], detected flag, allowed sexes."""
        L_inv = np.argsort(L)
        tables = []
        for i in range(M):
            j = int(L_inv[i])
            lrow, rrow = aug.left[i], aug.right[j]
            det = bool(lrow.any() or rrow.any())
            sex_obs = UNKNOWN
            for s_o in (int(aug.sex_left[i]), int(aug.sex_right[j])):
                if s_o != UNKNOWN:
                    sex_obs = s_o
            lik = np.zeros((2, G))
            for x in (FEMALE, MALE):
                sigma = params.sigma_m if x == MALE else params.sigma_f
                for g in range(G):
                    lik[x, g] = math.exp(_row_log_lik_given(
                        lrow, rrow, s_grid[g], sigma, base, phi, traps, J,
                        reduced))
            tables.append((lik, det, sex_obs))
        return tables

    n_perms = len(perms)
    w = np.zeros(n_perms)
    pz_given = np.zeros((n_perms, M))
    px_given = np.zeros((n_perms, M))
    state_log_kernel = {} if keep_states else None

    for pidx, L in enumerate(perms):
        tables = row_tables(L)
        row_totals = np.zeros(M)
        row_z1 = np.zeros(M)
        row_x1 = np.zeros(M)
        for i, (lik, det, sex_obs) in enumerate(tables):
            total = 0.0
            z1 = 0.0
            x1 = 0.0
            for x in (FEMALE, MALE):
                if sex_obs != UNKNOWN and x != sex_obs:
                    continue
                w_x = theta if x == MALE else 1.0 - theta
                inc = psi * w_x * lik[x].mean()      # uniform grid prior on s
                total += inc
                z1 += inc
                if x == MALE:
                    x1 += inc
                if not det:
                    exc = (1.0 - psi) * w_x
                    total += exc
                    if x == MALE:
                        x1 += exc
            row_totals[i] = total
            row_z1[i] = z1
            row_x1[i] = x1
        w[pidx] = np.prod(row_totals)
        with np.errstate(invalid="ignore", divide="ignore"):
            pz_given[pidx] = np.where(row_totals > 0, row_z1 / row_totals, 0.0)
            px_given[pidx] = np.where(row_totals > 0, row_x1 / row_totals, 0.0)

        if keep_states:
            for z in itertools.product((0, 1), repeat=M):
                for x in itertools.product((FEMALE, MALE), repeat=M):
                    for gs in itertools.product(range(G), repeat=M):
                        logk = 0.0
                        for i, (lik, det, sex_obs) in enumerate(tables):
                            w_x = theta if x[i] == MALE else 1.0 - theta
                            if z[i]:
                                v = psi * w_x * lik[x[i], gs[i]] / G
                            else:
                                v = 0.0 if det else (1.0 - psi) * w_x / G
                            if sex_obs != UNKNOWN and x[i] != sex_obs and z[i]:
                                v = 0.0
                            if v <= 0.0:
                                logk = float("-inf")
                                break
                            logk += math.log(v)
                        if math.isfinite(logk):
                            state_log_kernel[(z, x, tuple(int(v) for v in L), gs)] = logk

    mass = float(w.sum())
    if mass <= 0:
        raise ValueError("posterior mass is zero on this instance")
    pw = w / mass
    p_z = pw @ pz_given
    p_x = pw @ px_given
    p_link = np.zeros((M, M))
    link_probs = {}
    for pidx, L in enumerate(perms):
        link_probs[tuple(int(v) for v in L)] = float(pw[pidx])
        for j in range(M):
            p_link[j, L[j]] += pw[pidx]
    return JointEnumeration(mass=mass, p_z=p_z, p_x=p_x, p_link=p_link,
                            link_probs=link_probs,
                            state_log_kernel=state_log_kernel)


@dataclass
class ProbeReport:
    """Diagnostics for the known weak-identifiability regimes."""

    only_simultaneous_flag: bool        # data arrive as '11'/'00' cells only
    distance_dispersion: float          # SD of centre-to-trap distances
    distance_dispersion_flag: bool
    n_detected_pairs: int
    correlations: dict = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [
            f"only_simultaneous_flag: {self.only_simultaneous_flag}",
            f"distance_dispersion: {self.distance_dispersion:.6g}",
            f"distance_dispersion_flag: {self.distance_dispersion_flag}",
            f"n_detected_pairs: {self.n_detected_pairs}",
        ]
        for name, val in self.correlations.items():
            out.append(f"corr_{name}: {val:.4f}")
        return out


def identifiability_probe(data: CaptureData | None = None,
                          traps: TrapArray | None = None,
                          samples=None) -> ProbeReport:
    """Flag data patterns and posterior correlations that weaken the model.

    Detection-only-in-pairs data cannot separate entry from detection, and
    a degenerate spread of centre-to-trap distances cannot separate the
    baseline entry rate from the movement scales.  With posterior samples
    supplied, the relevant pairwise correlations are reported as well.
    """
    only_sim = False
    dispersion = float("nan")
    dispersion_flag = False
    n_pairs = 0
    if data is not None:
        lone = np.sum((data.left.astype(np.int16) + data.right) == 1)
        any_det = bool(data.left.any() or data.right.any())
        only_sim = (lone == 0) or not any_det
        if traps is not None and any_det:
            dists = []
            for r in range(data.n_rows):
                n_k = ((data.left[r] > 0) | (data.right[r] > 0)).sum(axis=1)
                hit = np.flatnonzero(n_k)
                if hit.size == 0:
                    continue
                centroid = (n_k[hit, None] * traps.coords[hit]).sum(axis=0) / n_k[hit].sum()
                for k in hit:
                    dists.append(float(np.hypot(*(centroid - traps.coords[k]))))
            n_pairs = len(dists)
            if n_pairs >= 2:
                dispersion = float(np.std(dists))
                dispersion_flag = dispersion < 1e-9
            else:
                dispersion = 0.0
                dispersion_flag = True
    correlations = {}
    if samples is not None:
        cols = samples.param_dict()
        pairs = [("phi", "p0"), ("p0", "sigma_m"), ("p0", "sigma_f")]
        for a, b in pairs:
            if a in cols and b in cols and len(cols[a]) > 1:
                correlations[f"{a}_{b}"] = float(np.corrcoef(cols[a], cols[b])[0, 1])
    return ProbeReport(
        only_simultaneous_flag=only_sim,
        distance_dispersion=dispersion,
        distance_dispersion_flag=dispersion_flag,
        n_detected_pairs=n_pairs,
        correlations=correlations,
    )
