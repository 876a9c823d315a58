"""Artifact readers and writers shared by the CLI and tests.

Formats: CSV with a header row and locale-independent decimal points,
MatrixMarket for sparse matrices (symmetric storage for precisions), JSON
run manifests with content hashes instead of timestamps so reruns of the
same job produce byte-identical artifacts.
"""

from __future__ import annotations

import hashlib
import json
import pathlib

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import InputError

__all__ = [
    "read_csv_columns",
    "read_points_csv",
    "write_csv",
    "write_samples_csv",
    "read_samples_csv",
    "write_matrix",
    "read_matrix",
    "sha256_file",
    "versions",
    "build_manifest",
    "write_manifest",
]

FLOAT_FORMAT = "%.17g"


def read_csv_columns(path):
    """Parse a headed CSV into a dict of float arrays keyed by column name.

    Raises InputError for missing headers, ragged rows, or non-numeric
    cells; the message carries the one-based line number.
    """
    path = pathlib.Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise InputError(f"{path}: empty file")
    names = [c.strip().lower() for c in lines[0].split(",")]
    if any(not n for n in names):
        raise InputError(f"{path}: blank column name in header")
    if len(set(names)) != len(names):
        raise InputError(f"{path}: duplicate column names")
    columns = {n: [] for n in names}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(names):
            raise InputError(
                f"{path} line {lineno}: expected {len(names)} cells, got {len(cells)}"
            )
        for name, cell in zip(names, cells):
            try:
                columns[name].append(float(cell))
            except ValueError as exc:
                raise InputError(
                    f"{path} line {lineno}: non-numeric value {cell.strip()!r}"
                ) from exc
    return {n: np.asarray(v, dtype=np.float64) for n, v in columns.items()}


def read_points_csv(path):
    """Read point locations with header ``x,y[,...]``.

    Returns (points array of shape (n, 2), dict of any extra columns).
    """
    columns = read_csv_columns(path)
    for required in ("x", "y"):
        if required not in columns:
            raise InputError(f"{path}: missing required column {required!r}")
    points = np.column_stack([columns.pop("x"), columns.pop("y")])
    return points, columns


def write_csv(path, columns):
    """Write named float columns; fixed %.17g so reruns are byte-identical."""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=np.float64).ravel() for n in names]
    n = arrays[0].size
    if any(a.size != n for a in arrays):
        raise InputError("columns differ in length")
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(n):
            fh.write(",".join(FLOAT_FORMAT % a[i] for a in arrays) + "\n")


def write_samples_csv(path, draws):
    """Draw matrix (n_draws, n_nodes) as CSV with node0..node{n-1} headers."""
    draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
    names = [f"node{j}" for j in range(draws.shape[1])]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for row in draws:
            fh.write(",".join(FLOAT_FORMAT % v for v in row) + "\n")


def read_samples_csv(path):
    columns = read_csv_columns(path)
    names = sorted(columns, key=lambda n: int(n.replace("node", "") or -1))
    if any(not n.startswith("node") for n in names):
        raise InputError(f"{path}: not a samples file (headers must be nodeK)")
    return np.column_stack([columns[n] for n in names])


def write_matrix(path, Q, symmetric=True):
    """MatrixMarket output; symmetric storage keeps the two triangles
    bit-identical on reread and halves the file."""
    scipy.io.mmwrite(
        str(path),
        sp.coo_matrix(Q),
        symmetry="symmetric" if symmetric else "general",
        precision=17,
    )


def read_matrix(path):
    """Read a MatrixMarket file to CSC; symmetric storage is expanded by
    the reader."""
    try:
        M = scipy.io.mmread(str(path))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read matrix {path}: {exc}") from exc
    return sp.csc_matrix(M)


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def versions():
    import platform

    import matplotlib
    import scipy

    try:
        from importlib.metadata import version as pkg_version

        own = pkg_version("spdefield")
    except Exception:
        own = "unknown"
    return {
        "spdefield": own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
        "python": platform.python_version(),
    }


def build_manifest(subcommand, inputs, parameters, outputs, seed=None):
    """Run manifest: content-addressed inputs/outputs, parameters, seed and
    library versions. Deliberately no timestamps: rerunning the same job
    must reproduce the manifest byte for byte.
    """
    return {
        "subcommand": subcommand,
        "inputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in inputs.items()
        },
        "parameters": parameters,
        "seed": seed,
        "outputs": {
            name: {"path": str(path), "sha256": sha256_file(path)}
            for name, path in outputs.items()
        },
        "versions": versions(),
    }


def write_manifest(path, manifest):
    with open(path, "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
