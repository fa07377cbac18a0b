"""
Persistence for grid sets: a run-length-encoded JSON blob and a plot-ready
CSV with one row per member cell. All writes are atomic.
"""

import csv
import io
import json
import os
import tempfile

import numpy as np

try:
    from .errors import RunArtifactError
    from .grid_utils import GridSpec, QSet, SSet
except ImportError:
    from errors import RunArtifactError
    from grid_utils import GridSpec, QSet, SSet

SET_SCHEMA_VERSION = 1
RLE_ENCODING = "rle-true-first"


def new_directory(path):
    if path and not os.path.exists(path):
        os.makedirs(path)


def atomic_write_text(path, text):
    """Write to a temporary file next to `path`, then rename over it."""
    directory = os.path.dirname(os.path.abspath(path))
    new_directory(directory)
    with tempfile.NamedTemporaryFile(
        mode="w", dir=directory, suffix=".tmp", delete=False, encoding="utf-8", newline=""
    ) as tmp:
        tmp.write(text)
        tmp_path = tmp.name
    os.replace(tmp_path, path)


def write_json(path, payload):
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def read_json(path):
    if not os.path.exists(path):
        raise RunArtifactError(f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise RunArtifactError(f"cannot parse {path}: {e}") from e


def write_csv(path, header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buffer.getvalue())


def format_float(x):
    # repr gives the shortest string that reloads to the same double
    return repr(float(x))


def rle_encode(bits):
    """
    Lengths of alternating runs over the flattened bits. The first run
    counts True values and may be zero.
    """
    bits = np.asarray(bits, dtype=bool).ravel()
    if bits.size == 0:
        return []
    change = np.flatnonzero(bits[1:] != bits[:-1]) + 1
    bounds = np.concatenate(([0], change, [bits.size]))
    runs = np.diff(bounds).tolist()
    if not bits[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs, size):
    runs = np.asarray(runs, dtype=np.int64)
    if np.any(runs < 0):
        raise RunArtifactError("negative run length in encoded set")
    values = np.arange(len(runs)) % 2 == 0
    bits = np.repeat(values, runs)
    if bits.size != size:
        raise RunArtifactError(f"encoded set decodes to {bits.size} bits, expected {size}")
    return bits


def set_to_dict(lattice, metadata=None):
    kind = "qset" if isinstance(lattice, QSet) else "sset"
    return {
        "schema_version": SET_SCHEMA_VERSION,
        "kind": kind,
        "metadata": metadata or {},
        "grid": lattice.grid.to_dict(),
        "shape": list(lattice.membership.shape),
        "count": lattice.count(),
        "encoding": RLE_ENCODING,
        "runs": rle_encode(lattice.membership),
    }


def set_from_dict(data):
    if data.get("schema_version") != SET_SCHEMA_VERSION or data.get("encoding") != RLE_ENCODING:
        raise RunArtifactError("unsupported set format")
    grid = GridSpec.from_dict(data["grid"])
    cls = {"qset": QSet, "sset": SSet}.get(data.get("kind"))
    if cls is None:
        raise RunArtifactError(f"unknown set kind: {data.get('kind')}")
    shape = tuple(data["shape"])
    bits = rle_decode(data["runs"], int(np.prod(shape)))
    lattice = cls(grid, bits.reshape(shape))
    if lattice.count() != data.get("count", lattice.count()):
        raise RunArtifactError("encoded set count does not match its bits")
    return lattice


def save_set(path, lattice, metadata=None):
    write_json(path, set_to_dict(lattice, metadata))


def load_set(path):
    """Returns (set, metadata)."""
    data = read_json(path)
    return set_from_dict(data), data.get("metadata", {})


def set_csv_rows(lattice):
    grid = lattice.grid
    cells = lattice.cells()
    rows = []
    for cell in cells:
        row = [format_float(x) for x in grid.state_point(cell[0])]
        if isinstance(lattice, QSet):
            row += [format_float(x) for x in grid.action_point(cell[1])]
        rows.append(row)
    return rows


def set_csv_header(lattice):
    grid = lattice.grid
    header = [f"state_{d}" for d in range(len(grid.state_axes))]
    if isinstance(lattice, QSet):
        header += [f"action_{d}" for d in range(len(grid.action_axes))]
    return header


def write_set_csv(path, lattice):
    write_csv(path, set_csv_header(lattice), set_csv_rows(lattice))
