"""Probability kernels for the dual-detector capture-recapture model.

The hierarchical structure: an animal with activity centre s enters trap k
on a given occasion with probability

    pi_k = p0 * exp(-d(s, u_k)^2 / (2 sigma^2)),

and, conditional on entry, each of the two detectors fires independently
with probability phi.  Collapsing the latent entry indicator gives the
four-cell distribution for the pair of detector outcomes:

    P(1,1) = pi * phi^2
    P(1,0) = P(0,1) = pi * phi (1 - phi)
    P(0,0) = (1 - pi) + pi (1 - phi)^2

The per-individual likelihood over K traps and J occasions depends on the
data only through the sufficient statistics (n_k, y1_tot + y2_tot):

    phi^(y1+y2) (1-phi)^(2 n. - (y1+y2))
        * prod_k pi_k^n_k [(1 - pi_k) + pi_k (1 - phi)^2]^(J - n_k)

The reduced (single-layer) variant drops the entry layer: each detector
fires directly with p_k = lambda0 * exp(-d^2 / (2 sigma^2)) per occasion.

All functions work in log space; impossible configurations return the
LOG_ZERO sentinel rather than raising.
"""

from __future__ import annotations

import math

import numpy as np

from .types import (
    MALE,
    UNKNOWN,
    AugmentedState,
    CellProbs,
    ModelParams,
    ReducedParams,
    StateSpace,
    SufficientStats,
    TrapArray,
)

LOG_ZERO = float("-inf")


def distance(s, u) -> float:
    """Euclidean distance between two planar points."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    return float(np.hypot(s[0] - u[0], s[1] - u[1]))


def trap_entry_prob(p0: float, sigma: float, d: float) -> float:
    """Probability of entering a trap at distance d from the activity centre.

    Gaussian decay from the baseline p0 at d = 0.  Raises on sigma <= 0.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return p0 * math.exp(-(d * d) / (2.0 * sigma * sigma))


def cell_probs(pi: float, phi: float) -> CellProbs:
    """Four-cell outcome distribution at one trap-occasion.

    pi is the trap entry probability, phi the per-detector detection
    probability given entry; the two detectors fire independently.
    """
    p11 = pi * phi * phi
    p10 = pi * phi * (1.0 - phi)
    p00 = (1.0 - pi) + pi * (1.0 - phi) * (1.0 - phi)
    return CellProbs(p00=p00, p10=p10, p01=p10, p11=p11)


def sufficient_stats(left: np.ndarray, right: np.ndarray) -> SufficientStats:
    """Sufficient statistics for one individual's (K, J) flank histories."""
    left = np.asarray(left)
    right = np.asarray(right)
    either = (left > 0) | (right > 0)
    return SufficientStats(
        n_k=either.sum(axis=1).astype(np.int64),
        m_k=(left.sum(axis=1) + right.sum(axis=1)).astype(np.int64),
        y1_tot=int(left.sum()),
        y2_tot=int(right.sum()),
    )


def _log_pi_terms(stats: SufficientStats, s_i, sigma: float, p0: float,
                  traps: TrapArray, J: int, one_minus_phi_sq: float) -> float:
    """Shared spatial part: sum_k n_k log pi_k + (J - n_k) log mix_k.

    log pi_k is expanded as log p0 - d^2/(2 sigma^2) so that large distances
    stay finite in log space instead of underflowing through exp().
    """
    d2 = np.sum((traps.coords - np.asarray(s_i, dtype=float)) ** 2, axis=1)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    pi = p0 * np.exp(-d2 * inv2s2)
    mix = (1.0 - pi) + pi * one_minus_phi_sq
    n_k = stats.n_k
    if p0 <= 0.0:
        if stats.n_dot > 0:
            return LOG_ZERO
        log_pi_part = 0.0
    else:
        log_pi_part = stats.n_dot * math.log(p0) - float(n_k @ d2) * inv2s2
    return log_pi_part + float((J - n_k) @ np.log(mix))


def individual_log_lik(stats: SufficientStats, s_i, x_i: int,
                       params: ModelParams, traps: TrapArray, J: int) -> float:
    """Collapsed log likelihood of one included individual's detection record."""
    phi = params.phi
    y = stats.y_tot
    n_dot = stats.n_dot
    if y > 0 and (phi <= 0.0 or params.p0 <= 0.0):
        return LOG_ZERO
    if phi >= 1.0 and 2 * n_dot - y > 0:
        return LOG_ZERO
    det = 0.0
    if y > 0:
        det += y * math.log(phi)
    if 2 * n_dot - y > 0:
        det += (2 * n_dot - y) * math.log(1.0 - phi)
    sigma = params.sigma(x_i)
    return det + _log_pi_terms(
        stats, s_i, sigma, params.p0, traps, J, (1.0 - phi) ** 2
    )


def reduced_individual_log_lik(stats: SufficientStats, s_i, x_i: int,
                               params: ReducedParams, traps: TrapArray,
                               J: int) -> float:
    """Single-layer log likelihood: independent per-detector Bernoulli draws."""
    d2 = np.sum((traps.coords - np.asarray(s_i, dtype=float)) ** 2, axis=1)
    sigma = params.sigma(x_i)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    m_k = stats.m_k
    if params.lambda0 <= 0.0:
        if stats.y_tot > 0:
            return LOG_ZERO
        rate_part = 0.0
    else:
        rate_part = stats.y_tot * math.log(params.lambda0) - float(m_k @ d2) * inv2s2
    p = params.lambda0 * np.exp(-d2 * inv2s2)
    if np.any((p >= 1.0) & (2 * J - m_k > 0)):
        return LOG_ZERO
    return rate_part + float((2 * J - m_k) @ np.log1p(-p))


def _check_permutation(data, L: np.ndarray) -> None:
    M = data.M
    L = np.asarray(L)
    if L.shape != (M,) or not np.array_equal(np.sort(L), np.arange(M)):
        raise ValueError("L is not a permutation of 0..M-1")
    anchored = np.flatnonzero(data.right_kind == 0)  # RowKind.FULL slots
    if not np.array_equal(L[anchored], anchored):
        raise ValueError("L moves an identity-anchored row")


def _row_support_ok(left_row, right_row, sex_l, sex_r) -> bool:
    if sex_l != UNKNOWN and sex_r != UNKNOWN and sex_l != sex_r:
        return False
    # a co-occurring detection on both flanks of a non-anchored pairing would
    # have been recorded as a single fully identified row
    return not bool(np.any((left_row > 0) & (right_row > 0)))


def log_posterior(state: AugmentedState, data, params: ModelParams,
                  traps: TrapArray, space: StateSpace) -> float:
    """Log posterior kernel of the full augmented model.

    ``data`` is an AugmentedData instance (see bisecr.linkage).  Uniform
    priors contribute constants: -log(area) per activity centre and
    -log(R) per sigma.  Out-of-support parameters, centres outside the
    state space, infeasible pairings under L, and excluded individuals
    with detections all yield LOG_ZERO.  A structurally invalid L raises.

    This is the reference implementation; the sampler keeps incremental
    caches and is validated against this function in the tests.  Per-row
    terms are combined with math.fsum so the value is exactly invariant
    under relabelling of interchangeable rows.
    """
    _check_permutation(data, state.L)
    if not params.in_support():
        return LOG_ZERO
    if not np.all(space.contains(state.s)):
        return LOG_ZERO
    L_inv = np.argsort(state.L)
    terms = []
    for i in range(data.M):
        slot = L_inv[i]
        left_row = data.left[i]
        right_row = data.right[slot]
        if data.left_kind[i] != 0 or data.right_kind[slot] != 0:
            if not _row_support_ok(left_row, right_row,
                                   data.sex_left[i], data.sex_right[slot]):
                return LOG_ZERO
        stats = sufficient_stats(left_row, right_row)
        if state.z[i]:
            ll = individual_log_lik(stats, state.s[i], int(state.x[i]),
                                    params, traps, data.J)
            x_term = math.log(params.theta if state.x[i] == MALE
                              else 1.0 - params.theta)
            terms.append(ll + x_term + math.log(params.psi))
        else:
            if stats.detected:
                return LOG_ZERO
            terms.append(math.log(1.0 - params.psi))
        terms.append(-math.log(space.area))
    if math.isfinite(params.R):
        terms.append(-2.0 * math.log(params.R))
    total = math.fsum(terms)
    return total if not math.isnan(total) else LOG_ZERO


def reduced_log_posterior(state: AugmentedState, data, params: ReducedParams,
                          traps: TrapArray, space: StateSpace) -> float:
    """Log posterior kernel of the reduced (single-layer) model."""
    _check_permutation(data, state.L)
    if not params.in_support():
        return LOG_ZERO
    if not np.all(space.contains(state.s)):
        return LOG_ZERO
    L_inv = np.argsort(state.L)
    terms = []
    for i in range(data.M):
        slot = L_inv[i]
        left_row = data.left[i]
        right_row = data.right[slot]
        if data.left_kind[i] != 0 or data.right_kind[slot] != 0:
            if not _row_support_ok(left_row, right_row,
                                   data.sex_left[i], data.sex_right[slot]):
                return LOG_ZERO
        stats = sufficient_stats(left_row, right_row)
        if state.z[i]:
            ll = reduced_individual_log_lik(stats, state.s[i], int(state.x[i]),
                                            params, traps, data.J)
            x_term = math.log(params.theta if state.x[i] == MALE
                              else 1.0 - params.theta)
            terms.append(ll + x_term + math.log(params.psi))
        else:
            if stats.detected:
                return LOG_ZERO
            terms.append(math.log(1.0 - params.psi))
        terms.append(-math.log(space.area))
    if math.isfinite(params.R):
        terms.append(-2.0 * math.log(params.R))
    total = math.fsum(terms)
    return total if not math.isnan(total) else LOG_ZERO
