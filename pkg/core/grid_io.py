"""
Portable dumps of domains, dyadic grids and per-cell values.

- Grid dump: header ``dim resolution spacing`` then a run-length encoded mask
  (runs alternate exterior/interior, starting with exterior, C order)
- Cube dump: one line per cube, ``k id parent x_Q r_Q n_cells cell_ids...``
- CSV dump: ``id,value`` rows
- Bundle: domain mask and cube table in one CBOR document with a SHA-256 digest
"""

import csv
import hashlib
import logging
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

import cbor2
import numpy as np

from core.domain import GridDomain
from core.dyadic_grid import DyadicGrid
from core.error_handler import StorageError


logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "elab-bundle"
BUNDLE_VERSION = 1
RUNS_PER_LINE = 32

PathLike = Union[str, Path]


# ---------------------------------------------------------------------- grid dump

def _runs(flat: np.ndarray) -> List[int]:
    runs = []
    current, count = False, 0
    for value in flat:
        if bool(value) == current:
            count += 1
        else:
            runs.append(count)
            current, count = bool(value), 1
    runs.append(count)
    return runs


def dump_grid(domain: GridDomain, path: PathLike) -> Path:
    """Write the interior mask of ``domain``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    runs = _runs(domain.interior.ravel())
    lines = [f"{domain.dim} {domain.resolution} {domain.h!r}"]
    for start in range(0, len(runs), RUNS_PER_LINE):
        lines.append(" ".join(str(r) for r in runs[start:start + RUNS_PER_LINE]))
    path.write_text("\n".join(lines) + "\n")
    logger.debug(f"Grid dump of '{domain.name}' written to {path} ({len(runs)} runs)")
    return path


def read_grid(path: PathLike, name: str = "") -> GridDomain:
    """
    Rebuild a domain from a grid dump.

    Raises:
        StorageError: If the header or the run lengths do not match
    """
    path = Path(path)
    try:
        header, *body = path.read_text().split("\n")
        dim_text, res_text, spacing_text = header.split()
        dim, resolution, spacing = int(dim_text), int(res_text), float(spacing_text)
        runs = [int(token) for line in body for token in line.split()]
    except (OSError, ValueError) as e:
        raise StorageError(f"Unreadable grid dump {path}: {e}") from e

    if not np.isclose(spacing, 1.0 / (resolution - 1)):
        raise StorageError(f"Spacing {spacing} does not match resolution {resolution}")
    size = resolution ** dim
    if sum(runs) != size:
        raise StorageError(f"Run lengths cover {sum(runs)} cells, expected {size}")

    flat = np.zeros(size, dtype=bool)
    position = 0
    for index, run in enumerate(runs):
        if index % 2 == 1:
            flat[position:position + run] = True
        position += run
    return GridDomain.from_mask(flat.reshape((resolution,) * dim), name=name or path.stem)


# ---------------------------------------------------------------------- cube dump

def dump_cubes(grid: DyadicGrid, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for cube in grid.cubes:
            coords = " ".join(repr(float(c)) for c in cube.x)
            cells = " ".join(str(int(m)) for m in cube.members)
            f.write(f"{cube.k} {cube.id} {cube.parent} {coords} {cube.radius!r} "
                    f"{cube.members.size} {cells}\n")
    logger.debug(f"{len(grid.cubes)} cubes written to {path}")
    return path


def read_cubes(path: PathLike, dim: int = 2) -> List[Dict[str, Any]]:
    """
    Parse a cube dump into dictionaries.

    Raises:
        StorageError: If a line is malformed
    """
    cubes = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        tokens = line.split()
        try:
            k, cid, parent = int(tokens[0]), int(tokens[1]), int(tokens[2])
            x = [float(t) for t in tokens[3:3 + dim]]
            radius = float(tokens[3 + dim])
            count = int(tokens[4 + dim])
            members = [int(t) for t in tokens[5 + dim:]]
        except (IndexError, ValueError) as e:
            raise StorageError(f"Malformed cube line {number} in {path}: {e}") from e
        if len(members) != count:
            raise StorageError(f"Cube line {number} lists {len(members)} cells, header says {count}")
        cubes.append({"k": k, "id": cid, "parent": parent, "x": x, "radius": radius,
                      "members": members})
    return cubes


# ---------------------------------------------------------------------- CSV

def write_values(path: PathLike, values: Sequence[float], header: str = "value") -> Path:
    """``id,value`` rows with ``repr`` floats so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", header])
        for index, value in enumerate(values):
            writer.writerow([index, repr(float(value))])
    return path


def read_values(path: PathLike) -> np.ndarray:
    """
    Raises:
        StorageError: If ids are not ``0..n-1`` in order
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))[1:]
    ids = [int(r[0]) for r in rows]
    if ids != list(range(len(rows))):
        raise StorageError(f"CSV {path} does not list ids 0..{len(rows) - 1} in order")
    return np.array([float(r[1]) for r in rows])


def write_table(path: PathLike, rows: Sequence[Dict[str, Any]]) -> Path:
    """Rows of a sweep table; columns follow the first row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


# ---------------------------------------------------------------------- bundle

def _digest(payload: Dict[str, Any]) -> str:
    return hashlib.sha256(cbor2.dumps(payload, canonical=True)).hexdigest()


def write_bundle(grid: DyadicGrid, path: PathLike) -> Path:
    """Domain mask plus the cube table as one CBOR document."""
    domain = grid.domain
    payload = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "name": domain.name,
        "dim": domain.dim,
        "resolution": domain.resolution,
        "mask": np.packbits(domain.interior.ravel()).tobytes(),
        "cubes": [
            [c.k, c.id, c.parent, [float(v) for v in c.x], float(c.radius),
             c.members.astype(np.int64).tolist()]
            for c in grid.cubes
        ],
    }
    document = {"payload": payload, "sha256": _digest(payload)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(cbor2.dumps(document, canonical=True))
    logger.info(f"Bundle of '{domain.name}' written to {path}")
    return path


def read_bundle(path: PathLike) -> Dict[str, Any]:
    """
    Load a bundle; ``domain`` is rebuilt from the mask.

    Raises:
        StorageError: If the document is not a bundle or fails its digest
    """
    try:
        document = cbor2.loads(Path(path).read_bytes())
        payload = document["payload"]
        digest = document["sha256"]
    except (OSError, cbor2.CBORDecodeError, KeyError, TypeError) as e:
        raise StorageError(f"Unreadable bundle {path}: {e}") from e
    if payload.get("format") != BUNDLE_FORMAT or payload.get("version") != BUNDLE_VERSION:
        raise StorageError(f"{path} is not a version {BUNDLE_VERSION} bundle")
    if _digest(payload) != digest:
        raise StorageError(f"Bundle {path} failed its integrity check")

    resolution, dim = payload["resolution"], payload["dim"]
    bits = np.unpackbits(np.frombuffer(payload["mask"], dtype=np.uint8))[:resolution ** dim]
    domain = GridDomain.from_mask(bits.astype(bool).reshape((resolution,) * dim), name=payload["name"])
    cubes = [{"k": k, "id": i, "parent": p, "x": x, "radius": r, "members": m}
             for k, i, p, x, r, m in payload["cubes"]]
    return {"domain": domain, "cubes": cubes}
