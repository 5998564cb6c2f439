"""Artifact formats: round trips, byte stability, corruption handling."""
import json

import numpy as np
import pytest

from rmplab.engine import PathEnsemble
from rmplab.errors import IOFailureError
from rmplab.grid import TimeGrid
from rmplab.storage import (
    MAGIC,
    build_manifest,
    read_ensemble_binary,
    read_ensemble_csv,
    sha256_file,
    to_jsonable,
    write_ensemble_binary,
    write_ensemble_csv,
    write_json,
    write_plotdata,
)


@pytest.fixture
def ensemble():
    grid = TimeGrid(dt=0.25, n_steps=4)
    rng = np.random.default_rng(5)
    return PathEnsemble(
        grid=grid,
        label="X",
        values=rng.normal(size=(6, 5)),
        flagged=np.array([False, True, False, False, False, True]),
        master_seed=99,
    )


def test_binary_round_trip(tmp_path, ensemble):
    path = tmp_path / "ens.bin"
    write_ensemble_binary(path, ensemble)
    back = read_ensemble_binary(path)
    np.testing.assert_array_equal(back.values, ensemble.values)
    np.testing.assert_array_equal(back.flagged, ensemble.flagged)
    assert back.label == "X"
    assert back.master_seed == 99
    assert back.grid.dt == ensemble.grid.dt
    assert path.read_bytes()[:8] == MAGIC


def test_binary_corruption_detected(tmp_path, ensemble):
    path = tmp_path / "ens.bin"
    write_ensemble_binary(path, ensemble)
    blob = path.read_bytes()

    bad_magic = tmp_path / "magic.bin"
    bad_magic.write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(IOFailureError):
        read_ensemble_binary(bad_magic)

    truncated = tmp_path / "short.bin"
    truncated.write_bytes(blob[:-7])
    with pytest.raises(IOFailureError):
        read_ensemble_binary(truncated)

    bad_version = tmp_path / "ver.bin"
    bad_version.write_bytes(blob[:8] + b"\xff\x00\x00\x00" + blob[12:])
    with pytest.raises(IOFailureError):
        read_ensemble_binary(bad_version)

    with pytest.raises(IOFailureError):
        read_ensemble_binary(tmp_path / "missing.bin")


def test_csv_round_trip(tmp_path, ensemble):
    path = tmp_path / "ens.csv"
    write_ensemble_csv(path, ensemble)
    back = read_ensemble_csv(path, "X", master_seed=99)
    np.testing.assert_array_equal(back.values, ensemble.values)  # repr round-trips
    np.testing.assert_array_equal(back.flagged, ensemble.flagged)
    first = path.read_text().splitlines()[0]
    assert first.startswith("path_index,flagged,0.0,0.25")


def test_write_is_byte_stable(tmp_path, ensemble):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write_ensemble_binary(a, ensemble)
    write_ensemble_binary(b, ensemble)
    assert sha256_file(a) == sha256_file(b)


def test_json_output_is_canonical(tmp_path):
    one, two = tmp_path / "one.json", tmp_path / "two.json"
    write_json(one, {"b": 1, "a": [np.float64(2.5), np.int32(3)]})
    write_json(two, {"a": [2.5, 3], "b": 1})
    assert one.read_bytes() == two.read_bytes()
    assert json.loads(one.read_text()) == {"a": [2.5, 3], "b": 1}


def test_to_jsonable_handles_special_floats():
    out = to_jsonable({"x": np.array([1.0, np.nan, np.inf, -np.inf])})
    assert out["x"][0] == 1.0
    assert out["x"][1] == "nan"
    assert out["x"][2] == "inf"
    assert out["x"][3] == "-inf"


def test_plotdata_and_stub(tmp_path):
    data = tmp_path / "curve.dat"
    stub = tmp_path / "plot_curve.py"
    write_plotdata(data, {"t": np.array([0.0, 1.0]), "v": np.array([2.0, 3.0])}, stub_path=stub)
    body = data.read_text().splitlines()
    assert body[0] == "# t v"
    assert body[1] == "0.0 2.0"
    loaded = np.loadtxt(data)
    np.testing.assert_allclose(loaded, [[0.0, 2.0], [1.0, 3.0]])
    assert "matplotlib" in stub.read_text()


def test_manifest_lists_checksums(tmp_path):
    (tmp_path / "x.csv").write_text("t\n1\n")
    manifest = build_manifest(
        tmp_path,
        ["x.csv"],
        config_hash="abc",
        wall_clock_s=0.5,
        subcommand="simulate",
        version="0.1.0",
        flagged={"simulate": 0},
        verdicts={},
    )
    assert manifest["config_sha256"] == "abc"
    entry = manifest["artifacts"][0]
    assert entry["path"] == "x.csv"
    assert entry["sha256"] == sha256_file(tmp_path / "x.csv")
    assert entry["bytes"] == (tmp_path / "x.csv").stat().st_size
