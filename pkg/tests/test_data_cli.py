import json

import numpy as np
import pytest

from crashcert import make_network
from crashcert.cli import main, parse_p
from crashcert.data import (Dataset, SchemaError, make_report, read_dataset, read_model, synth_dataset,
                            write_dataset, write_model)

from conftest import averaging_net


def test_model_roundtrip_is_exact(tmp_path):
    net = make_network([3, 5, 2], "sigmoid", seed=11)
    write_model(net, tmp_path / "m.json")
    back = read_model(tmp_path / "m.json")
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, back.weights))
    assert all(np.array_equal(a, b) for a, b in zip(net.biases, back.biases))
    assert back.activations == net.activations


def test_dataset_roundtrip(tmp_path):
    ds = synth_dataset("blobs", 20, 0.1, 3)
    write_dataset(ds, tmp_path / "d.csv")
    back = read_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.X, ds.X) and np.array_equal(back.Y, ds.Y)


def test_bad_files_give_located_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"layers": [ }')
    with pytest.raises(SchemaError, match="line"):
        read_model(p)
    c = tmp_path / "bad.csv"
    c.write_text("x0,target0\n1,2\n3\n")
    with pytest.raises(SchemaError, match="line 3"):
        read_dataset(c)
    with pytest.raises(SchemaError):
        Dataset(np.ones((2, 1)), np.ones((3, 1)))


def test_synth_spec():
    ds = read_dataset("synth:smooth-2d,n_samples=17,noise=0.0,seed=2")
    assert ds.X.shape == (17, 2)
    with pytest.raises(SchemaError):
        read_dataset("synth:smooth-1d,bogus=1")


def test_report_fields():
    r = make_report("inject", ["inject"], {"p": 0.1}, {"mean": 1.0}, seed=4)
    assert r["schema_version"] == "1.0"
    assert r["provenance"]["seed"] == 4


def test_parse_p():
    net = make_network([2, 3, 1], "sigmoid")
    assert parse_p("0.1", net.depth).p == (0.1, 0.1, 0.0)
    assert parse_p("0,0.2,0", net.depth).p == (0.0, 0.2, 0.0)


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "avg.json"
    write_model(averaging_net(4), path)
    return str(path)


def test_cli_enumerate_report(tmp_path, model_file, capsys):
    out = tmp_path / "r.json"
    code = main(["enumerate", "--model", model_file, "--x", "1,1,1,1", "--p", "0.1", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["results"]["mean"] == pytest.approx(-0.1, abs=1e-12)
    assert doc["results"]["variance"] == pytest.approx(0.0225, abs=1e-12)
    assert "exact mean" in capsys.readouterr().out


def test_cli_inject_is_reproducible(tmp_path, model_file):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path, threads in ((a, "1"), (b, "2")):
        assert main(["inject", "--model", model_file, "--x", "1,1,1,1", "--p", "0.1", "--samples", "9000",
                     "--seed", "3", "--threads", threads, "--out", str(path)]) == 0
    ra, rb = json.loads(a.read_text())["results"], json.loads(b.read_text())["results"]
    assert ra["mean"] == rb["mean"] and ra["variance"] == rb["variance"]


def test_cli_csv_output(tmp_path, model_file):
    out = tmp_path / "b.csv"
    assert main(["bound", "--model", model_file, "--x", "1,1,1,1", "--p", "0.1", "--format", "csv",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("method") and len(lines) == 5


def test_cli_exit_codes(tmp_path, model_file):
    assert main(["nonsense"]) == 1
    assert main(["enumerate", "--model", model_file, "--x", "1,1", "--p", "0.1"]) == 1
    assert main(["enumerate", "--model", str(tmp_path / "missing.json"), "--x", "1"]) == 1
    assert main(["median-plan", "--delta", "1e-5"]) == 0
    data = tmp_path / "d.csv"
    write_dataset(Dataset(np.ones((4, 4)), np.full((4, 1), 1.1)), data)
    # first-order mean loss increase 0.3 * 4 * 0.05 = 0.06 exceeds 0.01 -> infeasible
    assert main(["check-ft", "--model", model_file, "--data", str(data), "--p", "0.3",
                 "--epsilon", "0.01", "--samples-per-input", "10"]) == 2
