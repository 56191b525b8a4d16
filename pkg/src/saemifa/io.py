"""CSV/JSON ingestion and report serialization."""
from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ItemParameters, ResponseMatrix, validate_response_matrix

FLOAT_FMT = "%.17g"


class ParseError(ValueError):
    """CSV cell could not be parsed; message names the row/column."""


class IoError(OSError):
    """Report files could not be written."""


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


def load_responses_csv(path, has_header: bool = False) -> ResponseMatrix:
    """Read an N x J integer response matrix (row = examinee)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for i, row in enumerate(reader):
            if i == 0 and has_header:
                continue
            if not row:
                continue
            parsed = []
            for jj, cell in enumerate(row):
                try:
                    parsed.append(int(cell.strip()))
                except ValueError:
                    raise ParseError(
                        f"non-integer cell at row {i + 1}, column {jj + 1}: {cell!r}"
                    ) from None
            rows.append(parsed)
    if rows and any(len(r) != len(rows[0]) for r in rows):
        from .model import NonRectangular
        raise NonRectangular("rows have differing lengths")
    return validate_response_matrix(np.asarray(rows, dtype=np.int64))


def load_matrix_csv(path, has_header: bool = False) -> np.ndarray:
    """Read a rectangular float matrix."""
    out = np.loadtxt(path, delimiter=",", skiprows=1 if has_header else 0, ndmin=2)
    return out


def params_header(q: int, k: int, guessing: bool, se_methods=()) -> list:
    cols = [f"a{m + 1}" for m in range(q)] + ["b"]
    cols += [f"tau{kk + 1}" for kk in range(k - 1)]
    if guessing:
        cols.append("g")
    for method in se_methods:
        cols += [f"se_{method}_a{m + 1}" for m in range(q)]
        cols.append(f"se_{method}_b")
    return cols


def write_params_csv(params: ItemParameters, path, errors: Optional[dict] = None) -> None:
    """One row per item: a1..aQ, b, tau1..tauK-1[, g][, per-method SEs]."""
    errors = errors or {}
    q, k = params.n_factors, params.n_categories
    se_cols = {}
    for method, report in errors.items():
        per_item = np.full((params.n_items, q + 1), np.nan)
        for name, value in zip(report.names, report.se):
            m = re.match(r"a\[(\d+),(\d+)\]", name)
            if m:
                per_item[int(m.group(1)), int(m.group(2))] = value
                continue
            m = re.match(r"b\[(\d+)\]", name)
            if m:
                per_item[int(m.group(1)), q] = value
        se_cols[method] = per_item
    header = params_header(q, k, params.guessing is not None, sorted(se_cols))
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for jj in range(params.n_items):
                row = [_fmt(v) for v in params.loadings[jj]]
                row.append(_fmt(params.intercepts[jj]))
                row += [_fmt(v) for v in params.thresholds[jj]]
                if params.guessing is not None:
                    row.append(_fmt(params.guessing[jj]))
                for method in sorted(se_cols):
                    row += [_fmt(v) for v in se_cols[method][jj]]
                writer.writerow(row)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def read_params_csv(path) -> ItemParameters:
    """Round-trip loader for params.csv (ignores SE columns)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    a_cols = [i for i, h in enumerate(header) if re.fullmatch(r"a\d+", h)]
    b_col = header.index("b")
    tau_cols = [i for i, h in enumerate(header) if re.fullmatch(r"tau\d+", h)]
    g_col = header.index("g") if "g" in header else None
    a = np.array([[float(r[i]) for i in a_cols] for r in rows])
    b = np.array([float(r[b_col]) for r in rows])
    tau = np.array([[float(r[i]) for i in tau_cols] for r in rows])
    g = np.array([float(r[g_col]) for r in rows]) if g_col is not None else None
    return ItemParameters(loadings=a, intercepts=b, thresholds=tau, guessing=g)


def write_fit_report(fit, errors: Optional[dict], spectra: Optional[dict],
                     outdir) -> dict:
    """Write params.csv, spectral.json, fit_stats.json, trace.csv.

    Returns a mapping of logical names to the written paths.
    """
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    paths = {}
    paths["params"] = outdir / "params.csv"
    write_params_csv(fit.parameters, paths["params"], errors=errors)

    if spectra is not None:
        paths["spectral"] = outdir / "spectral.json"
        paths["spectral"].write_text(json.dumps(spectra, indent=2, sort_keys=True))

    stats = dict(getattr(fit, "fit_statistics", None) or {})
    stats.update({
        "iterations_used": int(fit.iterations_used),
        "converged": bool(fit.converged),
        "model": fit.model,
        "n_factors": int(fit.n_factors),
    })
    paths["fit_stats"] = outdir / "fit_stats.json"
    paths["fit_stats"].write_text(json.dumps(stats, indent=2, sort_keys=True))

    paths["trace"] = outdir / "trace.csv"
    with open(paths["trace"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "trace", "gain"])
        for i, (tr, ga) in enumerate(zip(fit.trace_history, fit.gain_history), start=1):
            writer.writerow([i, _fmt(tr), _fmt(ga)])
    return paths


def spectral_report(s2: np.ndarray, n: int, alpha: float = 0.001) -> dict:
    """JSON-ready spectral summary of a converged S2."""
    from .spectral import cov_to_corr, eigenvalue_ratios, significant_eigenvalues

    j = s2.shape[0]
    cov_eigs = np.linalg.eigvalsh(s2)[::-1]
    corr_eigs = np.linalg.eigvalsh(cov_to_corr(s2))[::-1]
    return {
        "eigenvalues": [float(v) for v in cov_eigs],
        "significant_cov": significant_eigenvalues(cov_eigs, j, n, alpha),
        "significant_corr": significant_eigenvalues(corr_eigs, j, n, alpha),
        "ratios": [float(v) for v in eigenvalue_ratios(cov_eigs)],
        "alpha": alpha,
        "n": int(n),
    }
