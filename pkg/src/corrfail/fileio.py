"""File formats for stage hand-off between CLI commands.

All floating-point CSV output uses the %.17g format so values round-trip
bit-exactly.  JSON is written with sorted keys and a fixed indent so
reruns produce byte-identical files.
"""

import json
from pathlib import Path

import numpy as np

from .core import MomentConstraints
from .errors import InputFormatError

FLOAT_FMT = "%.17g"


def dump_json(obj, path):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc


def save_matrix_csv(matrix, path):
    np.savetxt(path, np.atleast_2d(np.asarray(matrix, dtype=np.float64)),
               fmt=FLOAT_FMT, delimiter=",")


def load_matrix_csv(path):
    path = Path(path)
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def save_vector_csv(vector, path):
    np.savetxt(path, np.asarray(vector, dtype=np.float64), fmt=FLOAT_FMT)


def load_vector_csv(path):
    path = Path(path)
    try:
        return np.loadtxt(path, ndmin=1)
    except ValueError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def save_constraints(constraints, out_dir, provenance=None):
    """Write means.csv, corr.csv and the JSON descriptor into a directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_vector_csv(constraints.means, out_dir / "means.csv")
    save_matrix_csv(constraints.correlations, out_dir / "corr.csv")
    dump_json(
        {
            "dimension": int(constraints.dimension),
            "convention": "1=fail",
            "provenance": provenance or {},
        },
        out_dir / "constraints.json",
    )


def load_constraints(in_dir):
    """Read a constraints directory back into a MomentConstraints."""
    in_dir = Path(in_dir)
    desc = load_json(in_dir / "constraints.json")
    means = load_vector_csv(in_dir / "means.csv")
    corr = load_matrix_csv(in_dir / "corr.csv")
    if desc.get("dimension") != means.size:
        raise InputFormatError(
            f"{in_dir}: descriptor dimension {desc.get('dimension')} does not "
            f"match means.csv length {means.size}"
        )
    return MomentConstraints(means, corr)


def save_samples(samples, path, seed):
    """One state per line, comma-separated 0/1 digits, with a metadata header."""
    samples = np.asarray(samples, dtype=np.uint8)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# d={samples.shape[1]} seed={seed}\n")
        for row in samples:
            fh.write(",".join("1" if v else "0" for v in row))
            fh.write("\n")


def load_samples(path):
    """Returns ((n, d) uint8 samples, seed recorded in the header)."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
        if not header.startswith("# d="):
            raise InputFormatError(f"{path}:1: missing sample-file header")
        try:
            fields = dict(part.split("=") for part in header[2:].split())
            d = int(fields["d"])
            seed = int(fields["seed"])
        except (ValueError, KeyError) as exc:
            raise InputFormatError(f"{path}:1: malformed header {header!r}") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d:
                raise InputFormatError(
                    f"{path}:{lineno}: expected {d} entries, got {len(parts)}"
                )
            rows.append([int(p) for p in parts])
    samples = np.asarray(rows, dtype=np.uint8)
    if samples.size and not np.isin(samples, (0, 1)).all():
        raise InputFormatError(f"{path}: sample entries must be 0 or 1")
    return samples, seed
