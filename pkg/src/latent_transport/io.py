"""File formats: long-format dataset CSV, covariate CSV and line-delimited JSON archives.

Archives hold one JSON object per line.  Floats are written with Python's
shortest round-trip representation, so a saved fit loads back bit-exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, fields
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import __version__
from .core import Curve, Domain, TimeGrid, WarpMap
from .ltm import LTMConfig, LTMFit, compose_distortions
from .smooth import RawObservations

__all__ = [
    "ValidationError",
    "ARCHIVE_VERSION",
    "read_dataset",
    "write_dataset",
    "read_covariates",
    "write_curve_csv",
    "metadata_line",
    "save_fit",
    "load_fit",
    "save_truth",
    "load_truth",
]

ARCHIVE_VERSION = 1
DATASET_COLUMNS = ("subject_id", "component_id", "t", "y")
SPACING_RTOL = 1e-6


class ValidationError(ValueError):
    """Malformed or inconsistent input file."""


def metadata_line(command: str, seed, **extra) -> str:
    """The comment line heading every CSV written by the command-line tools."""
    parts = [f"latent_transport version={__version__}", f"command={command}", f"seed={seed}"]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return "# " + " ".join(parts) + "\n"


def _data_lines(fh):
    """Yield (line_number, text) for non-comment, non-blank lines."""
    for no, line in enumerate(fh, start=1):
        if line.strip() and not line.lstrip().startswith("#"):
            yield no, line


def read_dataset(path) -> Tuple[RawObservations, Domain, List[str], List[str]]:
    """Load a long-format dataset and rescale time affinely to [0, 1].

    Every (subject, component) series must share one equispaced time grid.
    Returns the observations on the unit grid, the original time domain, and
    subject and component ids in order of first appearance.
    """
    with open(path, newline="") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise ValidationError(f"{path}: no data rows")
    header_no, header = lines[0]
    cols = next(csv.reader([header]))
    cols = [c.strip() for c in cols]
    if tuple(cols) != DATASET_COLUMNS:
        raise ValidationError(f"{path}: line {header_no}: expected columns "
                              f"{','.join(DATASET_COLUMNS)}, found {','.join(cols)}")
    series: Dict[Tuple[str, str], List[Tuple[float, float]]] = {}
    sids: List[str] = []
    cids: List[str] = []
    for no, line in lines[1:]:
        row = next(csv.reader([line]))
        if len(row) != 4:
            raise ValidationError(f"{path}: line {no}: expected 4 fields, found {len(row)}")
        sid, cid, ts, ys = (r.strip() for r in row)
        try:
            t, y = float(ts), float(ys)
        except ValueError:
            raise ValidationError(f"{path}: line {no}: cannot parse t={ts!r}, y={ys!r}") from None
        if not (math.isfinite(t) and math.isfinite(y)):
            raise ValidationError(f"{path}: line {no}: t and y must be finite")
        if sid not in sids:
            sids.append(sid)
        if cid not in cids:
            cids.append(cid)
        series.setdefault((sid, cid), []).append((t, y))
    missing = [(s, c) for s in sids for c in cids if (s, c) not in series]
    if missing:
        s, c = missing[0]
        raise ValidationError(f"{path}: subject {s!r} has no rows for component {c!r}")
    first = sorted(series[(sids[0], cids[0])])
    t_ref = np.array([t for t, _ in first])
    Y = np.empty((len(sids), len(cids), t_ref.size))
    for i, s in enumerate(sids):
        for j, c in enumerate(cids):
            obs = sorted(series[(s, c)])
            t = np.array([o[0] for o in obs])
            if t.size != t_ref.size or not np.array_equal(t, t_ref):
                raise ValidationError(
                    f"{path}: series (subject {s!r}, component {c!r}) has a different time grid "
                    f"than (subject {sids[0]!r}, component {cids[0]!r}); ragged grids are not supported")
            Y[i, j] = [o[1] for o in obs]
    if t_ref.size < 3:
        raise ValidationError(f"{path}: need at least 3 time points per series")
    d = np.diff(t_ref)
    if np.any(d <= 0):
        raise ValidationError(f"{path}: repeated time points within a series")
    if np.max(np.abs(d - d.mean())) > SPACING_RTOL * d.mean():
        raise ValidationError(f"{path}: time grid is not equispaced")
    domain = Domain(float(t_ref[0]), float(t_ref[-1]))
    grid = TimeGrid.uniform(t_ref.size)
    return RawObservations(grid, Y), domain, sids, cids


def write_dataset(path, raw: RawObservations, domain: Domain | None = None,
                  subject_ids: Sequence[str] | None = None,
                  component_ids: Sequence[str] | None = None, header: str = "") -> None:
    domain = Domain(0.0, 1.0) if domain is None else domain
    sids = [str(i + 1) for i in range(raw.n)] if subject_ids is None else list(subject_ids)
    cids = [str(j + 1) for j in range(raw.p)] if component_ids is None else list(component_ids)
    t = domain.from_unit(raw.grid.points)
    with open(path, "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for i, s in enumerate(sids):
            for j, c in enumerate(cids):
                for ts, y in zip(t, raw.y[i, j]):
                    w.writerow([s, c, repr(float(ts)), repr(float(y))])


def read_covariates(path, subject_ids: Sequence[str]) -> np.ndarray:
    """Covariate values ordered like ``subject_ids``; every subject must be present."""
    with open(path, newline="") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise ValidationError(f"{path}: no data rows")
    cols = [c.strip() for c in next(csv.reader([lines[0][1]]))]
    if cols != ["subject_id", "x"]:
        raise ValidationError(f"{path}: line {lines[0][0]}: expected columns subject_id,x")
    values: Dict[str, float] = {}
    for no, line in lines[1:]:
        row = [r.strip() for r in next(csv.reader([line]))]
        if len(row) != 2:
            raise ValidationError(f"{path}: line {no}: expected 2 fields")
        try:
            x = float(row[1])
        except ValueError:
            raise ValidationError(f"{path}: line {no}: cannot parse x={row[1]!r}") from None
        if not math.isfinite(x):
            raise ValidationError(f"{path}: line {no}: x must be finite")
        values[row[0]] = x
    missing = [s for s in subject_ids if s not in values]
    if missing:
        raise ValidationError(f"{path}: no covariate for subjects {', '.join(missing)}")
    return np.array([values[s] for s in subject_ids])


def write_curve_csv(path, columns: Sequence[str], rows, header: str = "") -> None:
    """Write rows of numbers (floats in round-trip repr) under a metadata line."""
    with open(path, "w", newline="") as fh:
        fh.write(header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _write_jsonl(path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_jsonable(rec), sort_keys=True, allow_nan=True) + "\n")


def _read_jsonl(path, kind: str) -> Dict[str, dict]:
    with open(path) as fh:
        recs = [json.loads(line) for line in fh if line.strip()]
    if not recs or recs[0].get("record") != "header" or recs[0].get("format") != kind:
        raise ValidationError(f"{path}: not a {kind} archive")
    if recs[0].get("archive_version") != ARCHIVE_VERSION:
        raise ValidationError(f"{path}: unsupported archive version {recs[0].get('archive_version')!r}")
    out: Dict[str, dict] = {}
    for r in recs:
        out.setdefault(r["record"], []).append(r)
    return out


def save_fit(fit: LTMFit, path, domain: Domain | None = None) -> None:
    """Write a fit archive (one JSON record per line)."""
    domain = Domain(0.0, 1.0) if domain is None else domain
    recs = [{
        "record": "header", "format": "ltm-fit", "archive_version": ARCHIVE_VERSION,
        "software_version": __version__, "seed": fit.seed, "config": asdict(fit.config),
        "eta1": fit.eta1, "eta1_latent": fit.eta1_latent, "eta2": fit.eta2,
        "latent_scale": fit.latent_scale, "domain": [domain.lo, domain.hi],
        "subject_ids": list(fit.subject_ids), "component_ids": list(fit.component_ids),
    }, {"record": "grid", "points": _floats(fit.grid.points)},
        {"record": "latent", "values": _floats(fit.latent.values)}]
    for j, g in enumerate(fit.tempos):
        recs.append({"record": "tempo", "component": j, "grid": _floats(g.grid.points),
                     "values": _floats(g.values)})
    for j, psi in enumerate(fit.component_transports):
        recs.append({"record": "transport", "component": j, "theta": _floats(fit.transport_thetas[j]),
                     "grid": _floats(psi.grid.points), "values": _floats(psi.values)})
    for i, h in enumerate(fit.subject_warps):
        recs.append({"record": "subject_warp", "subject": i, "grid": _floats(h.grid.points),
                     "values": _floats(h.values)})
    recs.append({"record": "amplitudes", "shape": list(fit.amplitudes.shape),
                 "values": _floats(fit.amplitudes)})
    recs.append({"record": "representatives", "values": np.asarray(fit.representatives).tolist()})
    recs.append({"record": "diagnostics", "values": fit.diagnostics})
    _write_jsonl(path, recs)


def load_fit(path) -> Tuple[LTMFit, Domain]:
    """Read a fit archive written by :func:`save_fit`."""
    r = _read_jsonl(path, "ltm-fit")
    h = r["header"][0]
    grid = TimeGrid(r["grid"][0]["points"])
    tempos = [Curve(TimeGrid(t["grid"]), t["values"]) for t in sorted(r.get("tempo", []), key=lambda t: t["component"])]
    tr = sorted(r["transport"], key=lambda t: t["component"])
    psi = [WarpMap(TimeGrid(t["grid"]), t["values"]) for t in tr]
    sw = sorted(r["subject_warp"], key=lambda t: t["subject"])
    H = [WarpMap(TimeGrid(s["grid"]), s["values"]) for s in sw]
    amp = r["amplitudes"][0]
    cfg_fields = {f.name for f in fields(LTMConfig)}
    cfg = LTMConfig(**{k: v for k, v in h["config"].items() if k in cfg_fields})
    fit = LTMFit(
        grid=grid,
        latent=Curve(grid, r["latent"][0]["values"]),
        tempos=tempos,
        component_transports=psi,
        transport_thetas=np.array([t["theta"] for t in tr]),
        subject_warps=H,
        amplitudes=np.array(amp["values"]).reshape(amp["shape"]),
        distortions=compose_distortions(psi, H),
        representatives=np.array(r["representatives"][0]["values"]),
        eta1=h["eta1"], eta1_latent=h["eta1_latent"], eta2=h["eta2"],
        latent_scale=h["latent_scale"], seed=h["seed"], config=cfg,
        diagnostics=r["diagnostics"][0]["values"],
        subject_ids=tuple(h["subject_ids"]), component_ids=tuple(h["component_ids"]),
    )
    return fit, Domain(*h["domain"])


def save_truth(truth, path) -> None:
    """Archive the draws of a simulated data set (the rest is deterministic)."""
    recs = [{"record": "header", "format": "ltm-truth", "archive_version": ARCHIVE_VERSION,
             "software_version": __version__, "config": asdict(truth.config)},
            {"record": "draws", "w": _floats(truth.w), "d": _floats(truth.d),
             "amplitudes": _floats(truth.amplitudes), "shape": list(truth.amplitudes.shape)}]
    _write_jsonl(path, recs)


def load_truth(path):
    """Rebuild a :class:`SimTruth` from :func:`save_truth` output."""
    from .simgen import SimConfig, truth_from_draws

    r = _read_jsonl(path, "ltm-truth")
    c = r["header"][0]["config"]
    c = {k: tuple(v) if isinstance(v, list) else v for k, v in c.items()}
    d = r["draws"][0]
    shape = d["shape"]
    return truth_from_draws(SimConfig(**c), np.array(d["w"]), np.array(d["d"]).reshape(shape),
                            np.array(d["amplitudes"]).reshape(shape))
