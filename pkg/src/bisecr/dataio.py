"""File formats: traps, capture histories, samples, summaries, rasters.

All readers reject malformed input with a diagnostic naming the file and
line; all writers are deterministic byte-for-byte given the same input.
Floats in machine-readable files are written with repr() so read-back is
exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampler import PosteriorSamples, SummaryRow
from .simulate import CoverageReport, SimTruth
from .types import (
    FEMALE,
    MALE,
    UNKNOWN,
    CaptureData,
    RowKind,
    StateSpace,
    TrapArray,
)

_SEX_CHAR = {MALE: "M", FEMALE: "F", UNKNOWN: "U"}
_CHAR_SEX = {v: k for k, v in _SEX_CHAR.items()}

_CATEGORY_NAME = {0: "unobserved", 1: "full", 2: "left_only",
                  3: "right_only", 4: "split"}


def _fail(path, line_no: int, msg: str):
    raise ValueError(f"{path}:{line_no}: {msg}")


def _read_lines(path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().splitlines()


# ---------------------------------------------------------------------------
# traps
# ---------------------------------------------------------------------------

def read_traps(path) -> TrapArray:
    """Read `trap_id,x,y` rows; stations come back sorted by trap id."""
    lines = _read_lines(path)
    if not lines or lines[0].strip() != "trap_id,x,y":
        _fail(path, 1, "expected header 'trap_id,x,y'")
    ids, coords = [], []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            _fail(path, no, f"expected 3 fields, got {len(parts)}")
        try:
            tid = int(parts[0])
        except ValueError:
            _fail(path, no, f"bad trap_id {parts[0]!r}")
        try:
            x, y = float(parts[1]), float(parts[2])
        except ValueError:
            _fail(path, no, "bad coordinate")
        if not (math.isfinite(x) and math.isfinite(y)):
            _fail(path, no, "non-finite coordinate")
        if tid in ids:
            _fail(path, no, f"duplicate trap_id {tid}")
        ids.append(tid)
        coords.append((x, y))
    if not ids:
        _fail(path, len(lines), "no trap stations in file")
    order = np.argsort(np.asarray(ids), kind="stable")
    return TrapArray(coords=np.asarray(coords)[order],
                     labels=np.asarray(ids)[order])


def write_traps(traps: TrapArray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trap_id,x,y\n")
        for tid, (x, y) in zip(traps.labels, traps.coords):
            fh.write(f"{int(tid)},{x!r},{y!r}\n")


# ---------------------------------------------------------------------------
# capture histories (long format)
# ---------------------------------------------------------------------------

def _sort_ids(ids):
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def read_captures(path, traps: TrapArray, J: int, sex_path=None) -> CaptureData:
    """Read `animal_id,flank,trap_id,occasion` rows into a CaptureData.

    An animal with at least one occasion where both flanks were recorded at
    the same station is a FULL row; animals seen on one flank only become
    LEFT_ONLY / RIGHT_ONLY rows.  An id mixing both flanks without any
    simultaneous cell is rejected: under the recording protocol such
    histories arrive as two separate partial ids.  Duplicate records are
    idempotent.  Sex labels come from an optional `animal_id,sex` file.
    """
    lines = _read_lines(path)
    if not lines or lines[0].strip() != "animal_id,flank,trap_id,occasion":
        _fail(path, 1, "expected header 'animal_id,flank,trap_id,occasion'")
    trap_index = {int(t): k for k, t in enumerate(traps.labels)}
    hits: dict[str, list] = {}
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            _fail(path, no, f"expected 4 fields, got {len(parts)}")
        aid, flank = parts[0].strip(), parts[1].strip()
        if flank not in ("L", "R"):
            _fail(path, no, f"flank must be L or R, got {flank!r}")
        try:
            tid = int(parts[2])
        except ValueError:
            _fail(path, no, f"bad trap_id {parts[2]!r}")
        if tid not in trap_index:
            _fail(path, no, f"unknown trap_id {tid}")
        try:
            occ = int(parts[3])
        except ValueError:
            _fail(path, no, f"bad occasion {parts[3]!r}")
        if not (1 <= occ <= J):
            _fail(path, no, f"occasion {occ} outside 1..{J}")
        hits.setdefault(aid, []).append((flank, trap_index[tid], occ - 1))

    sex_map: dict[str, int] = {}
    if sex_path is not None:
        slines = _read_lines(sex_path)
        if not slines or slines[0].strip() != "animal_id,sex":
            _fail(sex_path, 1, "expected header 'animal_id,sex'")
        for no, line in enumerate(slines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 2:
                _fail(sex_path, no, f"expected 2 fields, got {len(parts)}")
            aid, sx = parts[0].strip(), parts[1].strip().upper()
            if sx not in _CHAR_SEX:
                _fail(sex_path, no, f"sex must be M, F or U, got {parts[1]!r}")
            sex_map[aid] = _CHAR_SEX[sx]

    K = traps.K
    per_kind: dict[RowKind, list] = {RowKind.FULL: [], RowKind.LEFT_ONLY: [],
                                     RowKind.RIGHT_ONLY: []}
    for aid in _sort_ids(hits.keys()):
        left = np.zeros((K, J), dtype=np.uint8)
        right = np.zeros((K, J), dtype=np.uint8)
        for flank, k, t in hits[aid]:
            (left if flank == "L" else right)[k, t] = 1
        has_l, has_r = bool(left.any()), bool(right.any())
        if has_l and has_r:
            if not np.any((left > 0) & (right > 0)):
                raise ValueError(
                    f"{path}: animal {aid!r} mixes both flanks without a "
                    "simultaneous capture; record it as two partial ids"
                )
            kind = RowKind.FULL
        elif has_l:
            kind = RowKind.LEFT_ONLY
        else:
            kind = RowKind.RIGHT_ONLY
        per_kind[kind].append((left, right, sex_map.get(aid, UNKNOWN)))

    rows = per_kind[RowKind.FULL] + per_kind[RowKind.LEFT_ONLY] + per_kind[RowKind.RIGHT_ONLY]
    kinds = ([RowKind.FULL] * len(per_kind[RowKind.FULL])
             + [RowKind.LEFT_ONLY] * len(per_kind[RowKind.LEFT_ONLY])
             + [RowKind.RIGHT_ONLY] * len(per_kind[RowKind.RIGHT_ONLY]))
    if rows:
        left = np.stack([r[0] for r in rows])
        right = np.stack([r[1] for r in rows])
        sex = np.array([r[2] for r in rows], dtype=np.int8)
    else:
        left = np.zeros((0, K, J), dtype=np.uint8)
        right = np.zeros((0, K, J), dtype=np.uint8)
        sex = np.zeros(0, dtype=np.int8)
    return CaptureData(J=J, left=left, right=right,
                       row_kind=np.array(kinds, dtype=np.int8), sex=sex)


def write_captures(data: CaptureData, path, sex_path=None,
                   traps: TrapArray | None = None) -> None:
    """Write long-format capture records; row index doubles as animal_id."""
    labels = (traps.labels if traps is not None
              else np.arange(data.K))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("animal_id,flank,trap_id,occasion\n")
        for r in range(data.n_rows):
            for flank, arr in (("L", data.left[r]), ("R", data.right[r])):
                for k, t in zip(*np.nonzero(arr)):
                    fh.write(f"{r},{flank},{int(labels[k])},{t + 1}\n")
    if sex_path is not None:
        with open(sex_path, "w", encoding="utf-8") as fh:
            fh.write("animal_id,sex\n")
            for r in range(data.n_rows):
                fh.write(f"{r},{_SEX_CHAR[int(data.sex[r])]}\n")


def write_truth(truth: SimTruth, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("animal,sex,s_x,s_y,category,left_row,right_row\n")
        for i in range(truth.n_true):
            fh.write(
                f"{i},{_SEX_CHAR[int(truth.sex[i])]},"
                f"{truth.s[i, 0]!r},{truth.s[i, 1]!r},"
                f"{_CATEGORY_NAME[int(truth.category[i])]},"
                f"{int(truth.left_row[i])},{int(truth.right_row[i])}\n"
            )


# ---------------------------------------------------------------------------
# posterior samples and summaries
# ---------------------------------------------------------------------------

def write_samples(samples: PosteriorSamples, path) -> None:
    """One column per tracked quantity, one row per kept iteration."""
    cols = samples.param_dict()
    if samples.n_kept == 0:
        raise ValueError("no kept samples to write")
    names = list(cols)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(samples.n_kept):
            fields = []
            for name in names:
                v = cols[name][i]
                fields.append(str(int(v)) if name in ("N", "N_male") else repr(float(v)))
            fh.write(",".join(fields) + "\n")


def read_samples(path) -> dict:
    """Read a samples CSV back into {column: array}."""
    lines = _read_lines(path)
    if not lines:
        _fail(path, 1, "empty samples file")
    names = lines[0].split(",")
    rows = []
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(names):
            _fail(path, no, f"expected {len(names)} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            _fail(path, no, "bad numeric field")
    mat = np.asarray(rows)
    out = {}
    for j, name in enumerate(names):
        col = mat[:, j]
        out[name] = col.astype(np.int64) if name in ("N", "N_male") else col
    return out


def format_summary(rows: list[SummaryRow]) -> str:
    header = f"{'parameter':<12}{'mean':>12}{'sd':>12}{'q025':>12}{'q50':>12}{'q975':>12}{'ci_width':>12}"
    out = [header]
    for r in rows:
        out.append(
            f"{r.name:<12}{r.mean:>12.6g}{r.sd:>12.6g}{r.q025:>12.6g}"
            f"{r.q50:>12.6g}{r.q975:>12.6g}{r.ci_width:>12.6g}"
        )
    return "\n".join(out) + "\n"


def write_summary(rows: list[SummaryRow], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_summary(rows))


def read_summary(path) -> dict[str, SummaryRow]:
    lines = [ln for ln in _read_lines(path) if ln.strip()]
    if not lines or lines[0].split() != ["parameter", "mean", "sd", "q025",
                                         "q50", "q975", "ci_width"]:
        _fail(path, 1, "not a summary file")
    out = {}
    for no, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 7:
            _fail(path, no, f"expected 7 fields, got {len(parts)}")
        name = parts[0]
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            _fail(path, no, "bad numeric field")
        out[name] = SummaryRow(name=name, mean=vals[0], sd=vals[1],
                               q025=vals[2], q50=vals[3], q975=vals[4])
    return out


def save_snapshots(path, samples: PosteriorSamples, space: StateSpace,
                   traps: TrapArray) -> None:
    """Persist the thinned (s, z) snapshots a density raster needs."""
    if samples.s_snapshots is None or samples.z_snapshots is None:
        raise ValueError("chain was run without snapshots")
    np.savez_compressed(
        path,
        s=samples.s_snapshots, z=samples.z_snapshots,
        bounds=np.array([space.xmin, space.xmax, space.ymin, space.ymax]),
        trap_coords=traps.coords, trap_labels=np.asarray(traps.labels),
        sigma_f_mean=float(np.mean(samples.sigma_f)),
    )


def load_snapshots(path) -> dict:
    with np.load(path) as z:
        bounds = z["bounds"]
        return {
            "s": z["s"], "z": z["z"],
            "space": StateSpace(*bounds.tolist()),
            "traps": TrapArray(coords=z["trap_coords"], labels=z["trap_labels"]),
            "sigma_f_mean": float(z["sigma_f_mean"]),
        }


# ---------------------------------------------------------------------------
# density raster
# ---------------------------------------------------------------------------

@dataclass
class DensityRaster:
    """Expected number of activity centres per pixel (row-major grid)."""

    x0: float
    y0: float
    cell: float
    nx: int
    ny: int
    values: np.ndarray   # (ny, nx)

    @property
    def total(self) -> float:
        return float(self.values.sum())


def density_raster(s_snapshots: np.ndarray, z_snapshots: np.ndarray,
                   space: StateSpace, cell_size: float,
                   per_area: bool = False) -> DensityRaster:
    """Average per-pixel counts of included activity centres over snapshots.

    The grid covers the state space, so the pixel values sum to the mean
    number of included individuals.  With per_area=True the values are
    divided by the pixel area.
    """
    s_snapshots = np.asarray(s_snapshots)
    z_snapshots = np.asarray(z_snapshots)
    if s_snapshots.ndim != 3 or s_snapshots.shape[0] == 0:
        raise ValueError("empty snapshot set")
    if cell_size <= 0:
        raise ValueError("cell size must be positive")
    nx = max(1, int(math.ceil((space.xmax - space.xmin) / cell_size - 1e-9)))
    ny = max(1, int(math.ceil((space.ymax - space.ymin) / cell_size - 1e-9)))
    x_edges = space.xmin + np.arange(nx + 1) * cell_size
    y_edges = space.ymin + np.arange(ny + 1) * cell_size
    x_edges[-1] = max(x_edges[-1], space.xmax)
    y_edges[-1] = max(y_edges[-1], space.ymax)
    acc = np.zeros((ny, nx))
    n_snap = s_snapshots.shape[0]
    for i in range(n_snap):
        pts = s_snapshots[i][z_snapshots[i] > 0]
        h, _, _ = np.histogram2d(pts[:, 1], pts[:, 0], bins=(y_edges, x_edges))
        acc += h
    acc /= n_snap
    if per_area:
        acc /= cell_size * cell_size
    return DensityRaster(x0=space.xmin, y0=space.ymin, cell=cell_size,
                         nx=nx, ny=ny, values=acc)


def write_raster(raster: DensityRaster, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("nx,ny,x0,y0,cell\n")
        fh.write(f"{raster.nx},{raster.ny},{raster.x0!r},{raster.y0!r},{raster.cell!r}\n")
        for iy in range(raster.ny):
            fh.write(",".join(repr(float(v)) for v in raster.values[iy]) + "\n")


def read_raster(path) -> DensityRaster:
    lines = _read_lines(path)
    if not lines or lines[0].strip() != "nx,ny,x0,y0,cell":
        _fail(path, 1, "expected header 'nx,ny,x0,y0,cell'")
    if len(lines) < 2:
        _fail(path, 2, "missing raster geometry line")
    parts = lines[1].split(",")
    if len(parts) != 5:
        _fail(path, 2, "expected 5 geometry fields")
    nx, ny = int(parts[0]), int(parts[1])
    x0, y0, cell = float(parts[2]), float(parts[3]), float(parts[4])
    values = []
    for no, line in enumerate(lines[2:2 + ny], start=3):
        row = [float(v) for v in line.split(",")]
        if len(row) != nx:
            _fail(path, no, f"expected {nx} values, got {len(row)}")
        values.append(row)
    if len(values) != ny:
        _fail(path, len(lines), f"expected {ny} value rows, got {len(values)}")
    return DensityRaster(x0=x0, y0=y0, cell=cell, nx=nx, ny=ny,
                         values=np.asarray(values))


# ---------------------------------------------------------------------------
# coverage report and probe output
# ---------------------------------------------------------------------------

def write_coverage(report: CoverageReport, path, replicate_path=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("parameter,true_value,coverage,covered,n_ok,n_reps\n")
        for name in report.truth:
            fh.write(
                f"{name},{report.truth[name]!r},{report.coverage[name]!r},"
                f"{report.covered[name]},{report.n_ok},{report.n_reps}\n"
            )
    if replicate_path is not None:
        names = list(report.truth)
        with open(replicate_path, "w", encoding="utf-8") as fh:
            cols = ",".join(f"{n}_mean,{n}_q025,{n}_q975" for n in names)
            fh.write(f"rep,status,{cols}\n")
            for res in report.replicates:
                fields = [str(res["rep"]), res["status"].replace(",", ";")]
                for n in names:
                    if n in res.get("estimates", {}):
                        m, lo, hi = res["estimates"][n]
                        fields += [repr(float(m)), repr(float(lo)), repr(float(hi))]
                    else:
                        fields += ["", "", ""]
                fh.write(",".join(fields) + "\n")


def write_probe(report, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in report.lines():
            fh.write(line + "\n")


# ---------------------------------------------------------------------------
# flat key=value configuration files
# ---------------------------------------------------------------------------

def read_config(path, allowed_keys) -> dict:
    """Parse `key = value` lines; unknown keys are errors, '#' comments ok."""
    out = {}
    for no, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            _fail(path, no, f"expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in allowed_keys:
            _fail(path, no, f"unknown configuration key {key!r}")
        out[key] = value
    return out
