"""Metropolis-within-Gibbs sampler for the augmented posterior.

One sweep updates, in order: z (inclusion), x (sex), s (activity centres),
psi, theta, the scalar parameters (phi, p0, sigma_m, sigma_f in the
identified model; lambda0, sigma_m, sigma_f in the reduced model), and
finally one linkage swap attempt per observed partial row.

The per-row log likelihood has the form

    det_terms + c0 * log(base) - S_nD2 / (2 sigma_i^2) + occ * S_mix - T_mix

where base is p0 (or lambda0), occ is J (or 2J), S_mix = sum_k log(miss_k),
T_mix = sum_k count_k log(miss_k) and S_nD2 = sum_k count_k d_ik^2, with
count = per-trap detection occasions n (identified) or per-trap flank
totals m (reduced).  The sampler keeps (pi, log miss, S_mix, T_mix, S_nD2)
as incrementally maintained caches so each kernel costs at most one
elementwise pass over the M x K matrix.  bisecr.model.log_posterior is the
slow reference implementation these caches are tested against.

Sex for rows not currently included carries no likelihood information, so
the theta update draws theta from its conjugate conditional with those
sexes integrated out and refreshes them from the new theta in the same
blocked step.

Reproducibility: a single numpy Generator seeded from the config drives
every draw, so a fixed seed yields a bit-identical chain.  Parallel chains
should derive their seeds from independent SeedSequence spawns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linkage import AugmentedData, LinkageState, combine_observed_sex
from .types import FEMALE, MALE, UNKNOWN, StateSpace, TrapArray

_SCALAR_NAMES = {
    "identified": ("phi", "p0", "sigma_m", "sigma_f"),
    "reduced": ("lambda0", "sigma_m", "sigma_f"),
}


@dataclass
class McmcConfig:
    """Chain length, priors, proposal scales, and adaptation settings."""

    iterations: int
    burn_in: int
    R: float
    M: int | None = None
    thin: int = 1
    seed: int = 0
    proposal_scales: dict | None = None
    adapt: bool = True
    adapt_window: int = 100
    target_acceptance: float = 0.3
    s_grid: np.ndarray | None = None   # restrict centres to a grid (testing)
    snapshot_thin: int = 0             # keep (s, z) every this many kept iters
    validate_every: int = 0            # linkage invariant checks (debugging)

    def __post_init__(self):
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not (0 < self.target_acceptance < 1):
            raise ValueError("target_acceptance must be in (0,1)")
        if not (self.R > 0 and math.isfinite(self.R)):
            raise ValueError("R must be positive and finite")
        if self.proposal_scales:
            for k, v in self.proposal_scales.items():
                if v < 0:
                    raise ValueError(f"proposal scale {k} must be >= 0")


@dataclass
class PosteriorSamples:
    """Kept draws of the parameters and the derived population counts."""

    model: str
    psi: np.ndarray
    theta: np.ndarray
    sigma_m: np.ndarray
    sigma_f: np.ndarray
    N: np.ndarray
    N_male: np.ndarray
    phi: np.ndarray | None = None
    p0: np.ndarray | None = None
    lambda0: np.ndarray | None = None
    acceptance: dict = field(default_factory=dict)
    s_snapshots: np.ndarray | None = None   # (n_snap, M, 2)
    z_snapshots: np.ndarray | None = None   # (n_snap, M)

    def param_dict(self) -> dict:
        cols = {"N": self.N, "psi": self.psi, "N_male": self.N_male,
                "theta": self.theta}
        if self.model == "identified":
            cols["phi"] = self.phi
            cols["p0"] = self.p0
        else:
            cols["lambda0"] = self.lambda0
        cols["sigma_m"] = self.sigma_m
        cols["sigma_f"] = self.sigma_f
        return cols

    @property
    def n_kept(self) -> int:
        return len(self.psi)


def _expit(t):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-t))


class GibbsSampler:
    """One MCMC chain over (z, x, s, L, parameters) for a fixed dataset."""

    def __init__(self, aug: AugmentedData, traps: TrapArray, space: StateSpace,
                 config: McmcConfig, model: str = "identified",
                 L0: np.ndarray | None = None,
                 rng: np.random.Generator | None = None):
        if model not in _SCALAR_NAMES:
            raise ValueError(f"unknown model {model!r}")
        if config.M is not None and config.M != aug.M:
            raise ValueError(f"config.M={config.M} but data are augmented to {aug.M}")
        traps.validate_inside(space)
        self.aug = aug
        self.traps = traps
        self.space = space
        self.config = config
        self.model = model
        self.M, self.K, self.J = aug.M, aug.K, aug.J
        self.occ = self.J if model == "identified" else 2 * self.J
        self.link = LinkageState(aug, L0)
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.scalar_names = _SCALAR_NAMES[model]
        self._u2 = (traps.coords * traps.coords).sum(axis=1)

        self.params: dict[str, float] = {}
        self.z = np.zeros(self.M, dtype=np.int8)
        self.x = np.zeros(self.M, dtype=np.int8)
        self.s = np.zeros((self.M, 2))

        self._grid = None
        self._grid_key = None
        self._grid_idx = None
        if config.s_grid is not None:
            self._grid = np.asarray(config.s_grid, dtype=float)
            if not np.all(space.contains(self._grid)):
                raise ValueError("s_grid contains points outside the state space")
            self._grid_d2 = ((self._grid[:, None, :] - traps.coords[None, :, :]) ** 2).sum(axis=2)
            self._grid_idx = np.zeros(self.M, dtype=np.int64)

        self.scales = self._default_scales()
        if config.proposal_scales:
            self.scales.update(config.proposal_scales)

        self._att = {k: 0 for k in (*self.scalar_names, "s", "L")}
        self._acc = {k: 0 for k in self._att}
        self._win_att = {k: 0 for k in self._att}
        self._win_acc = {k: 0 for k in self._att}
        self._n_windows = 0

        self._init_state()
        self._refresh_cache(None)

    # -- configuration ----------------------------------------------------

    def _default_scales(self) -> dict:
        # s starts at half the initial sigma_f (= R/8); adaptation tunes the rest
        R = self.config.R
        return {
            "s": R / 16.0,
            "phi": 0.05,
            "p0": 0.05,
            "lambda0": 0.05,
            "sigma_m": 0.05 * R,
            "sigma_f": 0.05 * R,
        }

    def _init_state(self):
        rng = self.rng
        link = self.link
        det = link.detected
        self.z[:] = np.where(det, 1, (rng.random(self.M) < 0.5).astype(np.int8))
        pinned = link.pinned_sex
        free = pinned == UNKNOWN
        self.x[:] = np.where(free, (rng.random(self.M) < 0.5).astype(np.int8), pinned)

        sp = self.space
        self.s[:, 0] = rng.uniform(sp.xmin, sp.xmax, self.M)
        self.s[:, 1] = rng.uniform(sp.ymin, sp.ymax, self.M)
        det_rows = np.flatnonzero(det)
        for i in det_rows:
            w = link.n[i].astype(float)
            centre = (w[:, None] * self.traps.coords).sum(axis=0) / w.sum()
            self.s[i] = centre
        jitter = 0.02 * min(sp.xmax - sp.xmin, sp.ymax - sp.ymin)
        self.s[det_rows] += rng.normal(0.0, jitter, (det_rows.size, 2))
        self.s[:, 0] = np.clip(self.s[:, 0], sp.xmin, sp.xmax)
        self.s[:, 1] = np.clip(self.s[:, 1], sp.ymin, sp.ymax)
        if self._grid is not None:
            self._snap_to_grid()

        R = self.config.R
        self.params["psi"] = (self.z.sum() + 1.0) / (self.M + 2.0)
        self.params["theta"] = 0.5
        if self.model == "identified":
            self.params["phi"] = 0.5
            self.params["p0"] = 0.02
        else:
            self.params["lambda0"] = 0.01
        self.params["sigma_m"] = R / 4.0
        self.params["sigma_f"] = R / 8.0

    def _snap_to_grid(self):
        d = ((self.s[:, None, :] - self._grid[None, :, :]) ** 2).sum(axis=2)
        self._grid_idx = np.argmin(d, axis=1)
        self.s[:] = self._grid[self._grid_idx]

    def set_state(self, z=None, x=None, s=None, L=None, params=None):
        """Overwrite parts of the chain state (used by calibration tests)."""
        if L is not None:
            self.link = LinkageState(self.aug, np.asarray(L, dtype=np.int64))
        if z is not None:
            self.z[:] = z
        if x is not None:
            self.x[:] = x
        if s is not None:
            self.s[:] = s
            if self._grid is not None:
                self._snap_to_grid()
        if params is not None:
            self.params.update(params)
        self._refresh_cache(None)

    # -- likelihood caches -------------------------------------------------

    @property
    def _counts(self) -> np.ndarray:
        return self.link.n if self.model == "identified" else self.link.m

    @property
    def _count_dot(self) -> np.ndarray:
        return self.link.n_dot if self.model == "identified" else self.link.y_tot

    @property
    def _base(self) -> float:
        return self.params["p0" if self.model == "identified" else "lambda0"]

    @property
    def _miss_factor(self) -> float:
        """c such that the per-cell miss probability is 1 - c * pi."""
        if self.model == "identified":
            phi = self.params["phi"]
            return phi * (2.0 - phi)
        return 1.0

    def _sigma_rows(self, rows=None) -> np.ndarray:
        x = self.x if rows is None else self.x[rows]
        return np.where(x == MALE, self.params["sigma_m"], self.params["sigma_f"])

    def _d2_to_traps(self, pts: np.ndarray) -> np.ndarray:
        """Squared distances (B, K) from points (B, 2) to every station."""
        d2 = ((pts * pts).sum(axis=1)[:, None] + self._u2[None, :]
              - 2.0 * (pts @ self.traps.coords.T))
        return np.maximum(d2, 0.0, out=d2)

    def _refresh_cache(self, rows):
        """Recompute pi / log-miss caches for the given rows (None = all)."""
        if rows is None:
            self.D2 = self._d2_to_traps(self.s)
            self.pi = np.zeros((self.M, self.K))
            self.logmix = np.zeros((self.M, self.K))
            self.Smix = np.zeros(self.M)
            self.Tmix = np.zeros(self.M)
            self.SnD2 = np.zeros(self.M)
            rows = np.arange(self.M)
        else:
            rows = np.asarray(rows)
            if rows.size == 0:
                return
            if self._grid is not None:
                return self._refresh_cache_grid(rows)
            self.D2[rows] = self._d2_to_traps(self.s[rows])
        sig = self._sigma_rows(rows)
        self.pi[rows] = self._base * np.exp(-self.D2[rows] / (2.0 * sig * sig)[:, None])
        self.logmix[rows] = np.log1p(-self._miss_factor * self.pi[rows])
        self.Smix[rows] = self.logmix[rows].sum(axis=1)
        counts = self._counts[rows]
        self.Tmix[rows] = np.einsum("ik,ik->i", counts, self.logmix[rows])
        self.SnD2[rows] = np.einsum("ik,ik->i", counts, self.D2[rows])

    def _refresh_cache_grid(self, rows: np.ndarray):
        """Grid-mode subset refresh: gather from the memoized tables."""
        tabs = self._grid_tables()
        gi = self._grid_idx[rows]
        self.D2[rows] = self._grid_d2[gi]
        for sex in (MALE, FEMALE):
            sel = self.x[rows] == sex
            if not np.any(sel):
                continue
            _, pig, logmixg, smixg = tabs[sex]
            rsel, gsel = rows[sel], gi[sel]
            self.pi[rsel] = pig[gsel]
            self.logmix[rsel] = logmixg[gsel]
            self.Smix[rsel] = smixg[gsel]
        counts = self._counts[rows]
        self.Tmix[rows] = np.einsum("ik,ik->i", counts, self.logmix[rows])
        self.SnD2[rows] = np.einsum("ik,ik->i", counts, self.D2[rows])

    def _refresh_stat_rows(self, rows):
        """After linkage changes: counts changed, pi and logmix did not."""
        rows = np.asarray(rows)
        counts = self._counts[rows]
        self.Tmix[rows] = np.einsum("ik,ik->i", counts, self.logmix[rows])
        self.SnD2[rows] = np.einsum("ik,ik->i", counts, self.D2[rows])

    def _det_terms(self) -> np.ndarray:
        """Flank-count factor of the identified likelihood, all rows."""
        if self.model != "identified":
            return 0.0
        phi = self.params["phi"]
        y = self.link.y_tot
        n2 = 2 * self.link.n_dot
        return y * math.log(phi) + (n2 - y) * math.log1p(-phi)

    def _loglik_rows(self) -> np.ndarray:
        """Per-row log likelihood of the current state, from the caches."""
        sig = self._sigma_rows()
        out = self._count_dot * math.log(self._base) - self.SnD2 / (2.0 * sig * sig)
        out += self.occ * self.Smix - self.Tmix
        return out + self._det_terms()

    def _batch_stats_loglik(self, rows: np.ndarray, counts: np.ndarray,
                            y_tot: np.ndarray, sexes: np.ndarray) -> np.ndarray:
        """Log likelihoods under hypothetical stats/sexes, one (B, K) pass.

        ``counts`` are per-trap detection occasions (identified model) or
        per-trap flank totals (reduced model) for each evaluated branch.
        """
        d2 = self.D2[rows]
        sigmas = np.where(sexes == MALE, self.params["sigma_m"], self.params["sigma_f"])
        inv = 1.0 / (2.0 * sigmas * sigmas)
        if self._grid is not None:
            tabs = self._grid_tables()
            gi = self._grid_idx[rows]
            logmix = np.empty_like(d2)
            smix = np.empty(len(rows))
            for sex in (MALE, FEMALE):
                sel = sexes == sex
                if not np.any(sel):
                    continue
                _, _, logmixg, smixg = tabs[sex]
                logmix[sel] = logmixg[gi[sel]]
                smix[sel] = smixg[gi[sel]]
        else:
            pi = self._base * np.exp(-d2 * inv[:, None])
            logmix = np.log1p(-self._miss_factor * pi)
            smix = logmix.sum(axis=1)
        cd2 = np.einsum("ik,ik->i", counts, d2)
        tmix = np.einsum("ik,ik->i", counts, logmix)
        if self.model == "identified":
            c_dot = counts.sum(axis=1)
            phi = self.params["phi"]
            det = y_tot * math.log(phi) + (2 * c_dot - y_tot) * math.log1p(-phi)
        else:
            c_dot = y_tot
            det = 0.0
        return (det + c_dot * math.log(self._base) - cd2 * inv
                + self.occ * smix - tmix)

    def log_posterior(self) -> float:
        """Log posterior kernel of the current state (progress diagnostics)."""
        z1 = self.z == 1
        theta = self.params["theta"]
        x_term = np.where(self.x == MALE, math.log(theta), math.log1p(-theta))
        psi = self.params["psi"]
        val = float(np.sum((self._loglik_rows() + x_term + math.log(psi))[z1]))
        val += float(np.sum(~z1)) * math.log1p(-psi)
        val -= self.M * math.log(self.space.area)
        val -= 2.0 * math.log(self.config.R)
        return val

    # -- kernels ------------------------------------------------------------

    def update_z(self):
        und = np.flatnonzero(~self.link.detected)
        if und.size == 0:
            return
        psi = self.params["psi"]
        t = math.log(psi) - math.log1p(-psi) + self.occ * self.Smix[und]
        self.z[und] = (self.rng.random(und.size) < _expit(t)).astype(np.int8)

    def _set_x(self, rows: np.ndarray, values: np.ndarray):
        changed = rows[self.x[rows] != values]
        self.x[rows] = values
        if changed.size:
            self._refresh_cache(changed)

    def _sigma_part(self, rows: np.ndarray, sex: int) -> np.ndarray:
        """Sigma-dependent likelihood part for given rows at one sex's sigma."""
        sigma = self.params["sigma_m" if sex == MALE else "sigma_f"]
        inv2s2 = 1.0 / (2.0 * sigma * sigma)
        if self._grid is not None:
            _, _, logmixg, smixg = self._grid_tables()[sex]
            gi = self._grid_idx[rows]
            logmix = logmixg[gi]
            smix = smixg[gi]
        else:
            pi = self._base * np.exp(-self.D2[rows] * inv2s2)
            logmix = np.log1p(-self._miss_factor * pi)
            smix = logmix.sum(axis=1)
        counts = self._counts[rows]
        return (-self.SnD2[rows] * inv2s2 + self.occ * smix
                - np.einsum("ik,ik->i", counts, logmix))

    def update_x(self):
        free = self.link.pinned_sex == UNKNOWN
        theta = self.params["theta"]
        z0 = np.flatnonzero(free & (self.z == 0))
        if z0.size:
            draws = (self.rng.random(z0.size) < theta).astype(np.int8)
            self._set_x(z0, draws)
        z1 = np.flatnonzero(free & (self.z == 1))
        if z1.size:
            part_m = self._sigma_part(z1, MALE)
            part_f = self._sigma_part(z1, FEMALE)
            t = math.log(theta) - math.log1p(-theta) + part_m - part_f
            draws = (self.rng.random(z1.size) < _expit(t)).astype(np.int8)
            self._set_x(z1, draws)

    def update_s(self):
        if self._grid is not None:
            return self._update_s_grid()
        sp = self.space
        z1 = self.z == 1
        cand = self.s + self.rng.normal(0.0, self.scales["s"], (self.M, 2))
        unif = np.column_stack([
            self.rng.uniform(sp.xmin, sp.xmax, self.M),
            self.rng.uniform(sp.ymin, sp.ymax, self.M),
        ])
        cand = np.where(z1[:, None], cand, unif)
        inside = sp.contains(cand)
        d2c = self._d2_to_traps(cand)
        sig = self._sigma_rows()
        inv2s2 = 1.0 / (2.0 * sig * sig)
        pic = self._base * np.exp(-d2c * inv2s2[:, None])
        logmixc = np.log1p(-self._miss_factor * pic)
        smixc = logmixc.sum(axis=1)
        counts = self._counts
        tmixc = np.einsum("ik,ik->i", counts, logmixc)
        snd2c = np.einsum("ik,ik->i", counts, d2c)
        part_new = -snd2c * inv2s2 + self.occ * smixc - tmixc
        part_old = -self.SnD2 * inv2s2 + self.occ * self.Smix - self.Tmix
        logu = np.log(self.rng.random(self.M))
        accept = z1 & inside & (logu < part_new - part_old)
        take = accept | ~z1
        self._att["s"] += int(z1.sum())
        self._acc["s"] += int(accept.sum())
        self._win_att["s"] += int(z1.sum())
        self._win_acc["s"] += int(accept.sum())
        if not np.any(take):
            return
        self.s[take] = cand[take]
        self.D2[take] = d2c[take]
        self.pi[take] = pic[take]
        self.logmix[take] = logmixc[take]
        self.Smix[take] = smixc[take]
        self.Tmix[take] = tmixc[take]
        self.SnD2[take] = snd2c[take]

    def _grid_tables(self) -> dict:
        """Per-sex (inv2s2, pi, logmix, Smix) over the grid, memoized on params."""
        key = (self._base, self._miss_factor,
               self.params["sigma_m"], self.params["sigma_f"])
        if self._grid_key != key:
            tabs = {}
            for sex, name in ((MALE, "sigma_m"), (FEMALE, "sigma_f")):
                sigma = self.params[name]
                inv2s2 = 1.0 / (2.0 * sigma * sigma)
                pig = self._base * np.exp(-self._grid_d2 * inv2s2)   # (G, K)
                logmixg = np.log1p(-self._miss_factor * pig)
                tabs[sex] = (inv2s2, pig, logmixg, logmixg.sum(axis=1))
            self._grid_tabs = tabs
            self._grid_key = key
        return self._grid_tabs

    def _update_s_grid(self):
        """Exact draw over the grid restriction (conditionally independent rows)."""
        grid, d2g = self._grid, self._grid_d2
        G = grid.shape[0]
        tabs = self._grid_tables()
        z1 = np.flatnonzero(self.z == 1)
        idx = self.rng.integers(G, size=self.M)
        if z1.size:
            counts = self._counts[z1]
            snd2 = counts @ d2g.T                        # (n1, G)
            logits = np.empty((z1.size, G))
            for sex in (MALE, FEMALE):
                sel = self.x[z1] == sex
                if not np.any(sel):
                    continue
                inv2s2, _, logmixg, smixg = tabs[sex]
                logits[sel] = (-snd2[sel] * inv2s2
                               + self.occ * smixg[None, :]
                               - counts[sel] @ logmixg.T)
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            u = self.rng.random(z1.size)
            idx[z1] = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
        self.s[:] = grid[idx]
        self._grid_idx = idx
        # caches assemble from the tables; no fresh transcendentals needed
        self.D2[:] = d2g[idx]
        for sex in (MALE, FEMALE):
            rows = np.flatnonzero(self.x == sex)
            if rows.size == 0:
                continue
            _, pig, logmixg, smixg = tabs[sex]
            gi = idx[rows]
            self.pi[rows] = pig[gi]
            self.logmix[rows] = logmixg[gi]
            self.Smix[rows] = smixg[gi]
        self.Tmix[:] = 0.0
        self.SnD2[:] = 0.0
        det = np.flatnonzero(self.link.detected)
        if det.size:
            counts = self._counts[det]
            self.Tmix[det] = np.einsum("ik,ik->i", counts, self.logmix[det])
            self.SnD2[det] = np.einsum("ik,ik->i", counts, self.D2[det])

    def update_psi(self):
        nz = int(self.z.sum())
        self.params["psi"] = float(self.rng.beta(1 + nz, 1 + self.M - nz))

    def update_theta(self):
        z1 = self.z == 1
        males = int(np.sum(z1 & (self.x == MALE)))
        females = int(np.sum(z1 & (self.x == FEMALE)))
        theta = float(self.rng.beta(1 + males, 1 + females))
        self.params["theta"] = theta
        # blocked draw: excluded rows carry no likelihood for their sex, so
        # they are integrated out of the Beta above and refreshed here
        z0 = np.flatnonzero(~z1 & (self.link.pinned_sex == UNKNOWN))
        if z0.size:
            draws = (self.rng.random(z0.size) < theta).astype(np.int8)
            self._set_x(z0, draws)

    def update_scalar_mh(self, name: str):
        old = self.params[name]
        prop = old + self.scales[name] * self.rng.normal()
        self._att[name] += 1
        self._win_att[name] += 1
        upper = self.config.R if name.startswith("sigma") else 1.0
        if not (0.0 < prop < upper):
            return
        z1 = self.z == 1
        if name == "phi":
            accept = self._try_phi(prop, z1)
        elif name in ("p0", "lambda0"):
            accept = self._try_base(prop, z1)
        else:
            accept = self._try_sigma(name, prop, z1)
        if accept:
            self._acc[name] += 1
            self._win_acc[name] += 1

    def _try_phi(self, prop: float, z1: np.ndarray) -> bool:
        phi = self.params["phi"]
        logmix_new = np.log1p(-prop * (2.0 - prop) * self.pi)
        smix_new = logmix_new.sum(axis=1)
        tmix_new = np.einsum("ik,ik->i", self._counts, logmix_new)
        y = int(self.link.y_tot[z1].sum())
        n2 = 2 * int(self.link.n_dot[z1].sum())
        delta = (y * (math.log(prop) - math.log(phi))
                 + (n2 - y) * (math.log1p(-prop) - math.log1p(-phi))
                 + self.occ * float((smix_new - self.Smix)[z1].sum())
                 - float((tmix_new - self.Tmix)[z1].sum()))
        if math.log(self.rng.random()) >= delta:
            return False
        self.params["phi"] = prop
        self.logmix = logmix_new
        self.Smix = smix_new
        self.Tmix = tmix_new
        return True

    def _try_base(self, prop: float, z1: np.ndarray) -> bool:
        old = self._base
        ratio = prop / old
        pi_new = self.pi * ratio
        logmix_new = np.log1p(-self._miss_factor * pi_new)
        smix_new = logmix_new.sum(axis=1)
        tmix_new = np.einsum("ik,ik->i", self._counts, logmix_new)
        delta = (float(self._count_dot[z1].sum()) * math.log(ratio)
                 + self.occ * float((smix_new - self.Smix)[z1].sum())
                 - float((tmix_new - self.Tmix)[z1].sum()))
        if math.log(self.rng.random()) >= delta:
            return False
        name = "p0" if self.model == "identified" else "lambda0"
        self.params[name] = prop
        self.pi = pi_new
        self.logmix = logmix_new
        self.Smix = smix_new
        self.Tmix = tmix_new
        return True

    def _try_sigma(self, name: str, prop: float, z1: np.ndarray) -> bool:
        sex = MALE if name == "sigma_m" else FEMALE
        rows = np.flatnonzero(self.x == sex)
        if rows.size == 0:
            self.params[name] = prop   # no likelihood term: prior draw
            return True
        old = self.params[name]
        inv_new = 1.0 / (2.0 * prop * prop)
        inv_old = 1.0 / (2.0 * old * old)
        pi_new = self._base * np.exp(-self.D2[rows] * inv_new)
        logmix_new = np.log1p(-self._miss_factor * pi_new)
        smix_new = logmix_new.sum(axis=1)
        counts = self._counts[rows]
        tmix_new = np.einsum("ik,ik->i", counts, logmix_new)
        rel = z1[rows]
        delta = (-float(self.SnD2[rows][rel].sum()) * (inv_new - inv_old)
                 + self.occ * float((smix_new - self.Smix[rows])[rel].sum())
                 - float((tmix_new - self.Tmix[rows])[rel].sum()))
        if math.log(self.rng.random()) >= delta:
            return False
        self.params[name] = prop
        self.pi[rows] = pi_new
        self.logmix[rows] = logmix_new
        self.Smix[rows] = smix_new
        self.Tmix[rows] = tmix_new
        return True

    # -- linkage -------------------------------------------------------------

    def _branch_tables(self, configs: list) -> list:
        """Per-row (z, x, log weight) tables with (z_i, x_i) enumerated.

        ``configs`` holds (row, n_k, m_k, y_tot, pinned_sex) tuples; the
        z = 1 branch likelihoods of all configs are evaluated in a single
        vectorized pass.
        """
        psi, theta = self.params["psi"], self.params["theta"]
        log_th = {MALE: math.log(theta), FEMALE: math.log1p(-theta)}
        identified = self.model == "identified"
        spec, rows, counts, ytots, sexes = [], [], [], [], []
        for ci, (i, n_k, m_k, y_tot, pinned) in enumerate(configs):
            for xv in ((MALE, FEMALE) if pinned == UNKNOWN else (int(pinned),)):
                spec.append((ci, xv))
                rows.append(i)
                counts.append(n_k if identified else m_k)
                ytots.append(y_tot)
                sexes.append(xv)
        ll = self._batch_stats_loglik(
            np.asarray(rows), np.asarray(counts),
            np.asarray(ytots, dtype=float), np.asarray(sexes))
        tables = [[] for _ in configs]
        log_psi, log_1mpsi = math.log(psi), math.log1p(-psi)
        for (ci, xv), val in zip(spec, ll):
            tables[ci].append((1, xv, log_psi + log_th[xv] + float(val)))
        for ci, (i, n_k, m_k, y_tot, pinned) in enumerate(configs):
            if y_tot == 0:
                for xv in ((MALE, FEMALE) if pinned == UNKNOWN else (int(pinned),)):
                    tables[ci].append((0, xv, log_1mpsi + log_th[xv]))
        return tables

    @staticmethod
    def _logsumexp(vals) -> float:
        top = max(vals)
        if top == float("-inf"):
            return top
        return top + math.log(sum(math.exp(v - top) for v in vals))

    def _redraw_row(self, i: int, branches: list):
        """Exact conditional draw of (z_i, x_i) from precomputed branches."""
        top = max(b[2] for b in branches)
        w = [math.exp(b[2] - top) for b in branches]
        u = self.rng.random() * math.fsum(w)
        acc = 0.0
        zv, xv = branches[-1][:2]
        for (bz, bx, _), wt in zip(branches, w):
            acc += wt
            if u < acc:
                zv, xv = bz, bx
                break
        self.z[i] = zv
        if self.x[i] != xv:
            self.x[i] = xv
            self._refresh_cache(np.array([i]))

    def update_L(self):
        link = self.link
        aug = self.aug
        n_attempts = aug.n_left_only + aug.n_right_only
        partial = link.partial_slots
        movable = link.movable_slots
        if partial.size == 0 or movable.size < 2:
            return
        for _ in range(n_attempts):
            j1 = int(partial[self.rng.integers(partial.size)])
            pos = int(np.searchsorted(movable, j1))
            k = int(self.rng.integers(movable.size - 1))
            j2 = int(movable[k + 1 if k >= pos else k])
            self._att["L"] += 1
            self._win_att["L"] += 1
            if not link.swap_feasible(j1, j2):
                continue
            a, sa, b, sb = link.stats_after_swap(j1, j2)
            pin_a_new = combine_observed_sex(aug.sex_left[a], aug.sex_right[j2])
            pin_b_new = combine_observed_sex(aug.sex_left[b], aug.sex_right[j1])
            tables = self._branch_tables([
                (a, sa.n_k, sa.m_k, sa.y_tot, pin_a_new),
                (b, sb.n_k, sb.m_k, sb.y_tot, pin_b_new),
                (a, link.n[a], link.m[a], int(link.y_tot[a]), int(link.pinned_sex[a])),
                (b, link.n[b], link.m[b], int(link.y_tot[b]), int(link.pinned_sex[b])),
            ])
            logg = [self._logsumexp([w for *_, w in t]) for t in tables]
            delta = logg[0] + logg[1] - logg[2] - logg[3]
            if math.log(self.rng.random()) >= delta:
                continue
            link.apply_swap(j1, j2)
            self._refresh_stat_rows([a, b])
            self._redraw_row(a, tables[0])
            self._redraw_row(b, tables[1])
            self._acc["L"] += 1
            self._win_acc["L"] += 1

    # -- driver ----------------------------------------------------------------

    def sweep(self):
        self.update_z()
        self.update_x()
        self.update_s()
        self.update_psi()
        self.update_theta()
        for name in self.scalar_names:
            self.update_scalar_mh(name)
        self.update_L()

    def _adapt(self):
        self._n_windows += 1
        gamma = 1.0 / math.sqrt(self._n_windows)
        for name in (*self.scalar_names, "s"):
            att = self._win_att[name]
            if att == 0:
                continue
            rate = self._win_acc[name] / att
            self.scales[name] *= math.exp(gamma * (rate - self.config.target_acceptance))
            self._win_att[name] = 0
            self._win_acc[name] = 0

    def acceptance_rates(self) -> dict:
        return {k: (self._acc[k] / self._att[k] if self._att[k] else float("nan"))
                for k in self._att}

    def run(self, progress=None, progress_every: int = 0) -> PosteriorSamples:
        """Run the configured chain and collect kept draws.

        Proposal scales adapt only during burn-in; the counters reported in
        the result cover the post burn-in, fixed-kernel phase.  Progress
        lines (iteration, log posterior, acceptance rates) stream to the
        ``progress`` file object every ``progress_every`` iterations.
        """
        cfg = self.config
        n_kept = (cfg.iterations - cfg.burn_in + cfg.thin - 1) // cfg.thin
        cols = {name: np.zeros(n_kept) for name in
                ("psi", "theta", "sigma_m", "sigma_f", *(
                    ("phi", "p0") if self.model == "identified" else ("lambda0",)))}
        N = np.zeros(n_kept, dtype=np.int64)
        N_male = np.zeros(n_kept, dtype=np.int64)
        snap_every = cfg.snapshot_thin
        n_snap = (n_kept + snap_every - 1) // snap_every if snap_every else 0
        s_snaps = np.zeros((n_snap, self.M, 2)) if n_snap else None
        z_snaps = np.zeros((n_snap, self.M), dtype=np.int8) if n_snap else None

        kept = 0
        for it in range(cfg.iterations):
            self.sweep()
            if cfg.validate_every and (it + 1) % cfg.validate_every == 0:
                self.link.check_invariants()
            in_burn = it < cfg.burn_in
            if in_burn and cfg.adapt and (it + 1) % cfg.adapt_window == 0:
                self._adapt()
            if it + 1 == cfg.burn_in:
                for k in self._att:
                    self._att[k] = 0
                    self._acc[k] = 0
            if not in_burn and (it - cfg.burn_in) % cfg.thin == 0:
                for name in cols:
                    cols[name][kept] = self.params[name]
                N[kept] = int(self.z.sum())
                N_male[kept] = int((self.z * (self.x == MALE)).sum())
                if snap_every and kept % snap_every == 0:
                    s_snaps[kept // snap_every] = self.s
                    z_snaps[kept // snap_every] = self.z
                kept += 1
            if progress is not None and progress_every and (it + 1) % progress_every == 0:
                rates = " ".join(f"acc_{k}={v:.3f}" for k, v in
                                 sorted(self.acceptance_rates().items())
                                 if not math.isnan(v))
                print(f"iteration={it + 1} log_posterior={self.log_posterior():.4f} {rates}",
                      file=progress, flush=True)
        return PosteriorSamples(
            model=self.model,
            psi=cols["psi"], theta=cols["theta"],
            sigma_m=cols["sigma_m"], sigma_f=cols["sigma_f"],
            N=N, N_male=N_male,
            phi=cols.get("phi"), p0=cols.get("p0"), lambda0=cols.get("lambda0"),
            acceptance=self.acceptance_rates(),
            s_snapshots=s_snaps, z_snapshots=z_snaps,
        )


def run_chain(aug: AugmentedData, traps: TrapArray, space: StateSpace,
              config: McmcConfig, model: str = "identified",
              L0: np.ndarray | None = None, progress=None,
              progress_every: int = 0) -> PosteriorSamples:
    """Convenience wrapper: build a sampler and run the full chain."""
    sampler = GibbsSampler(aug, traps, space, config, model=model, L0=L0)
    return sampler.run(progress=progress, progress_every=progress_every)


@dataclass
class SummaryRow:
    name: str
    mean: float
    sd: float
    q025: float
    q50: float
    q975: float

    @property
    def ci_width(self) -> float:
        return self.q975 - self.q025


def summarize(samples: PosteriorSamples) -> list[SummaryRow]:
    """Posterior mean, SD, and central quantiles for every tracked quantity.

    Quantiles use linear interpolation of the order statistics.  The means
    of the integer-valued counts N and N_male are rounded to whole animals;
    their quantiles are left as computed.
    """
    if samples.n_kept == 0:
        raise ValueError("no kept samples to summarise")
    rows = []
    for name, values in samples.param_dict().items():
        arr = np.asarray(values, dtype=float)
        q025, q50, q975 = np.quantile(arr, [0.025, 0.5, 0.975], method="linear")
        mean = float(arr.mean())
        if name in ("N", "N_male"):
            mean = float(round(mean))
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        rows.append(SummaryRow(name=name, mean=mean, sd=sd,
                               q025=float(q025), q50=float(q50), q975=float(q975)))
    return rows
