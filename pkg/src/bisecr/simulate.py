"""Synthetic data generation and the interval-coverage study harness."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .types import FEMALE, MALE, UNKNOWN, CaptureData, RowKind, StateSpace, TrapArray

# categories in the truth record
CAT_UNOBSERVED = 0
CAT_FULL = 1
CAT_LEFT_ONLY = 2
CAT_RIGHT_ONLY = 3
CAT_SPLIT = 4   # captured on both flanks but never simultaneously


@dataclass
class ScenarioSpec:
    """Ground-truth configuration for one simulated survey.

    With reduced=True the entry layer is dropped: p0 acts as the direct
    per-detector firing rate (phi is ignored) and the two detectors fire
    independently of each other.
    """

    n_true: int
    n_male_true: int
    p0: float
    phi: float
    sigma_m: float
    sigma_f: float
    space: StateSpace
    traps: TrapArray
    J: int
    seed: int = 0
    sex_mask_frac: float = 0.0   # fraction of rows whose sex label is hidden
    reduced: bool = False

    def __post_init__(self):
        if self.n_male_true > self.n_true:
            raise ValueError("more males than individuals")
        self.traps.validate_inside(self.space)


@dataclass
class SimTruth:
    """Everything the simulator knew, for scoring fits against the truth."""

    n_true: int
    n_male_true: int
    s: np.ndarray              # (N, 2) activity centres
    sex: np.ndarray            # (N,) MALE / FEMALE
    category: np.ndarray       # (N,) CAT_* codes
    left_row: np.ndarray       # (N,) row index in CaptureData, -1 if none
    right_row: np.ndarray      # (N,) row index in CaptureData, -1 if none

    def param_values(self, spec: ScenarioSpec) -> dict:
        return {
            "N": float(self.n_true),
            "N_male": float(self.n_male_true),
            "phi": spec.phi,
            "p0": spec.p0,
            "sigma_m": spec.sigma_m,
            "sigma_f": spec.sigma_f,
        }


def grid_array(nx: int, ny: int, xspan: float, yspan: float,
               buffer: float = 1.0) -> tuple[TrapArray, StateSpace]:
    """Regular nx x ny station grid with a buffer strip on every side.

    Stations sit at the centres of an nx x ny partition of the core
    xspan x yspan region, so spacing is xspan/nx by yspan/ny and every
    station is at least a buffer width from the state-space boundary.
    """
    space = StateSpace(0.0, xspan + 2 * buffer, 0.0, yspan + 2 * buffer)
    xs = buffer + (np.arange(nx) + 0.5) * (xspan / nx)
    ys = buffer + (np.arange(ny) + 0.5) * (yspan / ny)
    coords = np.array([(x, y) for x in xs for y in ys])
    return TrapArray(coords=coords), space


def standard_grid(buffer: float = 1.0) -> tuple[TrapArray, StateSpace]:
    """The 160-station reference design: 10 x 16 grid inside a 5 x 7 space."""
    return grid_array(10, 16, 3.0, 5.0, buffer)


def simulate_dataset(spec: ScenarioSpec) -> tuple[CaptureData, SimTruth]:
    """Draw one survey from the generative model.

    Activity centres are uniform on the state space; per occasion each
    individual enters each trap independently with its Gaussian-decay
    entry probability; given entry both detectors fire independently with
    probability phi.  An individual captured at least once on both flanks
    simultaneously becomes one FULL row.  One captured on both flanks but
    never simultaneously yields one LEFT_ONLY and one RIGHT_ONLY row (the
    truth record links them).  Uncaptured individuals appear only in the
    truth record.
    """
    rng = np.random.default_rng(spec.seed)
    N, K, J = spec.n_true, spec.traps.K, spec.J
    sp = spec.space
    s = np.column_stack([
        rng.uniform(sp.xmin, sp.xmax, N),
        rng.uniform(sp.ymin, sp.ymax, N),
    ])
    sex = np.zeros(N, dtype=np.int8)
    sex[rng.permutation(N)[:spec.n_male_true]] = MALE

    sigma = np.where(sex == MALE, spec.sigma_m, spec.sigma_f)
    d2 = ((s[:, None, :] - spec.traps.coords[None, :, :]) ** 2).sum(axis=2)
    pi = spec.p0 * np.exp(-d2 / (2.0 * sigma[:, None] ** 2))
    if spec.reduced:
        left = (rng.random((N, K, J)) < pi[:, :, None]).astype(np.uint8)
        right = (rng.random((N, K, J)) < pi[:, :, None]).astype(np.uint8)
    else:
        entered = rng.random((N, K, J)) < pi[:, :, None]
        left = (entered & (rng.random((N, K, J)) < spec.phi)).astype(np.uint8)
        right = (entered & (rng.random((N, K, J)) < spec.phi)).astype(np.uint8)

    simultaneous = np.any((left > 0) & (right > 0), axis=(1, 2))
    has_l = left.any(axis=(1, 2))
    has_r = right.any(axis=(1, 2))

    category = np.full(N, CAT_UNOBSERVED, dtype=np.int8)
    category[simultaneous] = CAT_FULL
    category[~simultaneous & has_l & has_r] = CAT_SPLIT
    category[~simultaneous & has_l & ~has_r] = CAT_LEFT_ONLY
    category[~simultaneous & ~has_l & has_r] = CAT_RIGHT_ONLY

    rows_left, rows_right, row_kind, row_sex, row_animal = [], [], [], [], []

    def add_row(animal: int, l: np.ndarray, r: np.ndarray, kind: RowKind):
        rows_left.append(l)
        rows_right.append(r)
        row_kind.append(kind)
        masked = spec.sex_mask_frac > 0 and rng.random() < spec.sex_mask_frac
        row_sex.append(UNKNOWN if masked else sex[animal])
        row_animal.append(animal)

    zero = np.zeros((K, J), dtype=np.uint8)
    for i in np.flatnonzero(category == CAT_FULL):
        add_row(i, left[i], right[i], RowKind.FULL)
    for i in np.flatnonzero((category == CAT_LEFT_ONLY) | (category == CAT_SPLIT)):
        add_row(i, left[i], zero, RowKind.LEFT_ONLY)
    for i in np.flatnonzero((category == CAT_RIGHT_ONLY) | (category == CAT_SPLIT)):
        add_row(i, zero, right[i], RowKind.RIGHT_ONLY)

    left_row = np.full(N, -1, dtype=np.int64)
    right_row = np.full(N, -1, dtype=np.int64)
    for r, (animal, kind) in enumerate(zip(row_animal, row_kind)):
        if kind in (RowKind.FULL, RowKind.LEFT_ONLY):
            left_row[animal] = r
        if kind in (RowKind.FULL, RowKind.RIGHT_ONLY):
            right_row[animal] = r

    if rows_left:
        data = CaptureData(
            J=J,
            left=np.stack(rows_left),
            right=np.stack(rows_right),
            row_kind=np.array(row_kind, dtype=np.int8),
            sex=np.array(row_sex, dtype=np.int8),
        )
    else:
        data = CaptureData(
            J=J,
            left=np.zeros((0, K, J), dtype=np.uint8),
            right=np.zeros((0, K, J), dtype=np.uint8),
            row_kind=np.zeros(0, dtype=np.int8),
            sex=np.zeros(0, dtype=np.int8),
        )
    truth = SimTruth(n_true=N, n_male_true=spec.n_male_true, s=s, sex=sex,
                     category=category, left_row=left_row, right_row=right_row)
    return data, truth


# ---------------------------------------------------------------------------
# coverage study
# ---------------------------------------------------------------------------

@dataclass
class CoverageReport:
    """Per-parameter 95% interval coverage over simulation replicates."""

    truth: dict
    coverage: dict
    covered: dict
    n_ok: int
    n_reps: int
    replicates: list = field(default_factory=list)


def _derive_seed(*key) -> int:
    return int(np.random.SeedSequence(list(key)).generate_state(1, dtype=np.uint64)[0])


def _backsim_one(payload: dict) -> dict:
    """One replicate: simulate at the point estimates, fit, score intervals."""
    from .linkage import augment
    from .sampler import GibbsSampler, summarize

    spec: ScenarioSpec = payload["spec"]
    config = payload["config"]
    model = payload["model"]
    rep = payload["rep"]
    spec = replace(spec, seed=_derive_seed(payload["seed"], rep, 0))
    config = replace(config, seed=_derive_seed(payload["seed"], rep, 1))
    out = {"rep": rep, "status": "ok", "estimates": {}}
    try:
        data, _ = simulate_dataset(spec)
        aug, L0 = augment(data, config.M)
        sampler = GibbsSampler(aug, spec.traps, spec.space, config,
                               model=model, L0=L0)
        samples = sampler.run()
        for row in summarize(samples):
            out["estimates"][row.name] = (row.mean, row.q025, row.q975)
    except Exception as exc:  # propagate per-replicate failures as status
        out["status"] = f"error: {exc}"
    return out


def back_simulate(estimates: dict, reps: int, traps: TrapArray,
                  space: StateSpace, J: int, config, model: str = "identified",
                  seed: int = 0, sex_mask_frac: float = 0.0,
                  n_jobs: int | None = None) -> CoverageReport:
    """Simulate at the fitted point estimates and measure interval coverage.

    ``estimates`` must contain N, N_male, sigma_m, sigma_f plus phi and p0
    (identified model) or lambda0 (reduced model).  Each replicate draws a
    dataset at those values, refits, and records whether each central 95%
    credible interval contains the value used to simulate.  Replicates run
    in parallel, each on an RNG stream derived from (seed, replicate).
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    reduced = model == "reduced"
    if reduced:
        p_entry, p_det = float(estimates["lambda0"]), 1.0
    else:
        p_entry, p_det = float(estimates["p0"]), float(estimates["phi"])
    spec = ScenarioSpec(
        n_true=int(round(estimates["N"])),
        n_male_true=int(round(estimates["N_male"])),
        p0=p_entry, phi=p_det,
        sigma_m=float(estimates["sigma_m"]), sigma_f=float(estimates["sigma_f"]),
        space=space, traps=traps, J=J, seed=0, sex_mask_frac=sex_mask_frac,
        reduced=reduced,
    )
    payloads = [
        {"spec": spec, "config": config, "model": model, "seed": seed, "rep": r}
        for r in range(reps)
    ]
    if n_jobs is None:
        n_jobs = min(reps, os.cpu_count() or 1)
    if n_jobs > 1 and reps > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_backsim_one, payloads))
    else:
        results = [_backsim_one(p) for p in payloads]

    truth = {k: float(v) for k, v in estimates.items()}
    if model == "reduced":
        truth.pop("phi", None)
        truth.pop("p0", None)
    covered = {k: 0 for k in truth}
    n_ok = 0
    for res in results:
        if res["status"] != "ok":
            continue
        n_ok += 1
        for name, true_val in truth.items():
            if name in res["estimates"]:
                _, lo, hi = res["estimates"][name]
                if lo <= true_val <= hi:
                    covered[name] += 1
    coverage = {k: (covered[k] / n_ok if n_ok else float("nan")) for k in truth}
    return CoverageReport(truth=truth, coverage=coverage, covered=covered,
                          n_ok=n_ok, n_reps=reps, replicates=results)
