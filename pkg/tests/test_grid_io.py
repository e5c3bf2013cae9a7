"""Tests for grid, cube, CSV and bundle dumps."""

import cbor2
import numpy as np
import pytest

from core.domain import GridDomain
from core.error_handler import StorageError
from core.grid_io import (
    dump_cubes,
    dump_grid,
    read_bundle,
    read_cubes,
    read_grid,
    read_values,
    write_bundle,
    write_table,
    write_values,
)


class TestGridDump:

    def test_disk_survives_a_dump(self, tmp_path):
        disk = GridDomain.disk(33)
        path = dump_grid(disk, tmp_path / "disk.grid")
        restored = read_grid(path)

        assert np.array_equal(restored.interior, disk.interior)
        assert restored.name == "disk"
        assert restored.n_boundary == disk.n_boundary

    def test_header(self, tmp_path, square):
        path = dump_grid(square, tmp_path / "square.grid")
        dim, resolution, spacing = path.read_text().splitlines()[0].split()
        assert (int(dim), int(resolution)) == (2, 33)
        assert float(spacing) == square.h

    def test_run_lengths_must_cover_the_lattice(self, tmp_path):
        path = tmp_path / "short.grid"
        path.write_text("2 5 0.25\n6 3\n")
        with pytest.raises(StorageError, match="expected 25"):
            read_grid(path)

    def test_spacing_must_match(self, tmp_path):
        path = tmp_path / "bad.grid"
        path.write_text("2 5 0.3\n25\n")
        with pytest.raises(StorageError, match="does not match"):
            read_grid(path)

    def test_unreadable_header(self, tmp_path):
        path = tmp_path / "garbage.grid"
        path.write_text("not a grid\n")
        with pytest.raises(StorageError):
            read_grid(path)


class TestCubeDump:

    def test_cube_lines(self, tmp_path, square_grid):
        path = dump_cubes(square_grid, tmp_path / "cubes.txt")
        cubes = read_cubes(path)

        assert len(cubes) == len(square_grid.cubes)
        first = cubes[0]
        top = square_grid.cubes[0]
        assert first["k"] == top.k
        assert first["members"] == top.members.tolist()
        assert first["x"] == pytest.approx(top.x.tolist())

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "cubes.txt"
        path.write_text("0 0 -1 0.5 0.5 0.25 3 1 2\n")
        with pytest.raises(StorageError, match="header says 3"):
            read_cubes(path)


class TestCsv:

    def test_values_are_exact(self, tmp_path):
        values = [0.1, 1 / 3, 2.0 ** -40]
        restored = read_values(write_values(tmp_path / "omega.csv", values, header="omega"))
        assert restored.tolist() == values

    def test_ids_must_be_in_order(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,value\n1,0.5\n0,0.5\n")
        with pytest.raises(StorageError, match="in order"):
            read_values(path)

    def test_table_columns_follow_first_row(self, tmp_path):
        rows = [{"parameter": 0.0, "rh": 1.0}, {"parameter": 0.5, "rh": 1.25}]
        path = write_table(tmp_path / "table.csv", rows)
        assert path.read_text().splitlines() == ["parameter,rh", "0.0,1.0", "0.5,1.25"]


class TestBundle:

    def test_bundle_restores_domain_and_cubes(self, tmp_path, square_grid, square):
        restored = read_bundle(write_bundle(square_grid, tmp_path / "square.cbor"))

        assert np.array_equal(restored["domain"].interior, square.interior)
        assert len(restored["cubes"]) == len(square_grid.cubes)
        assert restored["cubes"][-1]["members"] == square_grid.cubes[-1].members.tolist()

    def test_tampered_bundle(self, tmp_path, square_grid):
        path = write_bundle(square_grid, tmp_path / "square.cbor")
        document = cbor2.loads(path.read_bytes())
        document["payload"]["name"] = "forged"
        path.write_bytes(cbor2.dumps(document))

        with pytest.raises(StorageError, match="integrity"):
            read_bundle(path)

    def test_foreign_document(self, tmp_path):
        path = tmp_path / "other.cbor"
        path.write_bytes(cbor2.dumps({"payload": {"format": "other"}, "sha256": ""}))
        with pytest.raises(StorageError, match="not a version 1 bundle"):
            read_bundle(path)

    def test_not_cbor(self, tmp_path):
        path = tmp_path / "plain.cbor"
        path.write_bytes(b"")
        with pytest.raises(StorageError, match="Unreadable"):
            read_bundle(path)
