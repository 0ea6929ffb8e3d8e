import csv
import json

import pytest

from weylrec.cli import EXIT_ASSUMPTION, EXIT_IO, EXIT_OK, main
from weylrec.model import reference_system, save_spec, spec_from_dict, spec_to_dict


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name in ("free_n2", "reference_n2"):
        paths[name] = tmp_path / f"{name}.json"
        save_spec(reference_system(name), paths[name])
    d = spec_to_dict(reference_system("reference_n2"))
    d["A"] = [[[0, 0], [0.25, 0]], [[1, 0], [0, 0]]]        # mu = -1/2, 1/2
    paths["gap"] = tmp_path / "gap.json"
    paths["gap"].write_text(json.dumps(d))
    paths["bad"] = tmp_path / "bad.json"
    paths["bad"].write_text("{\"A\": ")
    return paths


def test_validate_exit_codes(files, tmp_path, capsys):
    assert main(["validate", "--spec", str(files["reference_n2"]), "--out", str(tmp_path / "v")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "sectors: 2" in out and "not integrable" in out
    data = json.loads((tmp_path / "v" / "validate.json").read_text())
    assert data["qtilde_integrable"] is False and len(data["sectors"]) == 2
    assert main(["validate", "--spec", str(files["gap"])]) == EXIT_ASSUMPTION
    assert "integer" in capsys.readouterr().out
    assert main(["validate", "--spec", str(files["bad"])]) == EXIT_IO
    assert main(["validate", "--spec", str(tmp_path / "missing.json")]) == EXIT_IO


def test_bad_spec_rejected_by_every_command(files, tmp_path):
    for cmd in ("forward", "verify-asymptotics", "reconstruct"):
        assert main([cmd, "--spec", str(files["gap"]), "--out", str(tmp_path / cmd)]) == EXIT_ASSUMPTION


def _forward(spec, out):
    return main(["forward", "--spec", str(spec), "--out", str(out), "--x-grid", "1.0",
                 "--rho-count", "3", "--rho-max", "10", "--sector-samples", "4"])


def test_forward_free_system_is_deterministic(files, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _forward(files["free_n2"], a) == EXIT_OK
    assert _forward(files["free_n2"], b) == EXIT_OK
    assert (a / "samples.jsonl").read_bytes() == (b / "samples.jsonl").read_bytes()
    recs = [json.loads(line) for line in (a / "samples.jsonl").read_text().splitlines()]
    assert len(recs) == 2 * 3
    assert set(recs[0]) == {"x", "rho", "ray_index", "P_hat"}
    assert max(abs(v) for r in recs for row in r["P_hat"] for e in row for v in e) < 1e-9
    summary = json.loads((a / "forward_summary.json").read_text())
    assert summary["rays"] == 2 and min(summary["sector_min_delta"]) > 1e-8


def test_forward_threads_match_serial(files, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    _forward(files["reference_n2"], a)
    main(["forward", "--spec", str(files["reference_n2"]), "--out", str(b), "--x-grid", "1.0",
          "--rho-count", "3", "--rho-max", "10", "--sector-samples", "4", "--threads", "2"])
    assert (a / "samples.jsonl").read_bytes() == (b / "samples.jsonl").read_bytes()


def test_verify_asymptotics(files, tmp_path):
    out = tmp_path / "v"
    code = main(["verify-asymptotics", "--spec", str(files["reference_n2"]), "--out", str(out),
                 "--x-grid", "1.0", "--rho-min", "10", "--rho-max", "80", "--ray", "0.7853981633974483"])
    assert code == EXIT_OK
    rows = list(csv.reader(open(out / "residuals.csv")))
    assert rows[0][:3] == ["x", "ray_angle", "abs_rho"]
    assert [float(r[2]) for r in rows[1:]] == [10, 20, 40, 80]
    # a separation ray is refused
    assert main(["verify-asymptotics", "--spec", str(files["reference_n2"]), "--out", str(out),
                 "--ray", "1.5707963267948966"]) == EXIT_IO


def test_reconstruct_free_system(files, tmp_path):
    out = tmp_path / "r"
    args = ["reconstruct", "--spec", str(files["free_n2"]), "--out", str(out), "--x-grid", "1.0",
            "--r-schedule", "10,20,40", "--tol", "1e-7"]
    assert main(args) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"x_grid", "r_schedule", "delta", "max_relative_error", "max_diagonal", "converged",
                            "converged_per_x", "min_delta", "inner_bound", "tolerance", "passed"}
    assert summary["max_relative_error"] < 1e-7 and summary["passed"]
    rows = list(csv.reader(open(out / "reconstruction.csv")))
    assert rows[0] == ["x", "i", "j", "re_q", "im_q", "re_true", "im_true", "error"]
    assert len(rows) == 1 + 4
    first = (out / "reconstruction.csv").read_bytes()
    assert main(args) == EXIT_OK
    assert (out / "reconstruction.csv").read_bytes() == first
    conv = list(csv.reader(open(out / "convergence.csv")))
    assert len(conv) == 1 + 3


def test_argument_errors(files, tmp_path):
    with pytest.raises(SystemExit):
        main(["forward", "--spec", str(files["free_n2"]), "--out", str(tmp_path), "--x-grid", "a,b"])
