import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drot import experiments, io
from drot.cli import main
from drot.core import DualPotentials, SolverConfig, TransportPlan, make_problem, random_simplex_instance
from drot.solver import solve

TRIVIAL_JSON = '{"a": [1.0], "b": [1.0], "cost": {"dense": [[0.0]]}}'


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


# problem files


def test_problem_round_trip_is_bit_identical(tmp_path):
    p = random_simplex_instance(7, m=4, seed=9)
    io.save_problem(p, tmp_path / "p.json")
    q = io.load_problem(tmp_path / "p.json")
    for x, y in ((p.a, q.a), (p.b, q.b), (p.C, q.C)):
        np.testing.assert_array_equal(x, y)


def test_sqeuclidean_cost_file():
    p = io.parse_problem('{"a": [0.5, 0.5], "b": [1.0], "cost": {"sqeuclidean": '
                         '{"x": [[0, 0], [1, 2]], "y": [[1, 0]]}}}')
    np.testing.assert_array_equal(p.C, [[1.0], [4.0]])


def test_parse_error_reports_byte_offset():
    # the value is missing right after the newline: line 2, column 1
    with pytest.raises(io.InputError, match=r"byte offset 18 \(line 2, column 1\)"):
        io.parse_problem('{"a": [1.0], "b":\n')


def test_parse_error_offset_counts_bytes_not_characters():
    text = '{"é": 1, "a": [1.0],,}'
    with pytest.raises(io.InputError) as exc:
        io.parse_problem(text)
    offset = text.encode().index(b",,") + 1
    assert f"byte offset {offset}" in str(exc.value)


@pytest.mark.parametrize("text, needle", [
    ('[1, 2]', "top level"),
    ('{"a": [1.0], "b": [1.0]}', "missing"),
    ('{"a": [1.0], "b": [1.0], "cost": {"manhattan": []}}', "unknown cost"),
    ('{"a": [1.0], "b": [1.0], "cost": {"dense": [[0.0, 1.0]]}}', "dimension mismatch"),
    ('{"a": [-1.0], "b": [1.0], "cost": {"dense": [[0.0]]}}', "negative"),
    ('{"a": ["x"], "b": [1.0], "cost": {"dense": [[0.0]]}}', "numeric"),
])
def test_invalid_problem_files(text, needle):
    with pytest.raises(io.InputError, match=needle):
        io.parse_problem(text)


# plan files


@given(st.lists(st.floats(1e-300, 1e300, allow_subnormal=False), min_size=1, max_size=12),
       st.integers(0, 2**32 - 1))
def test_plan_csv_round_trip_is_exact(values, seed):
    rng = np.random.default_rng(seed)
    cells = rng.choice(16, size=len(values), replace=False)
    plan = TransportPlan(4, 4, cells // 4, cells % 4, np.array(values))
    back = io.parse_plan(io.plan_to_csv(plan), (4, 4))
    assert back == plan.sorted()


def test_solver_plan_round_trip(tmp_path):
    p = random_simplex_instance(12, seed=2)
    res = solve(p, SolverConfig(gamma=100.0))
    io.save_plan(res.plan, tmp_path / "plan.csv")
    assert io.load_plan(tmp_path / "plan.csv", p.shape) == res.plan.sorted()


def test_plan_file_layout():
    text = io.plan_to_csv(TransportPlan.from_dense([[0.0, 0.25], [0.1, 0.0]]))
    assert text == "i,j,value\n0,1,0.25\n1,0,0.1\n"


@pytest.mark.parametrize("text", ["", "a,b,c\n", "i,j,value\n0,1\n", "i,j,value\n0,x,1.0\n",
                                  "i,j,value\n5,0,1.0\n"])
def test_bad_plan_files(text):
    with pytest.raises(io.InputError):
        io.parse_plan(text, (2, 2))


def test_potentials_round_trip_with_config(tmp_path):
    pots = DualPotentials(np.array([0.1, -2.0]), np.array([3.0]), log_f=np.array([1.0, 2.0]))
    cfg = SolverConfig(gamma=3.5, phi="entropy", cost_shift=1e-3)
    io.save_potentials(pots, tmp_path / "p.json", cfg)
    back, cfg2 = io.load_potentials(tmp_path / "p.json")
    np.testing.assert_array_equal(back.f, pots.f)
    np.testing.assert_array_equal(back.log_f, pots.log_f)
    assert io.config_to_dict(cfg2) == io.config_to_dict(cfg)


def test_json_keeps_non_finite_values_strict(tmp_path):
    io.save_json({"x": float("inf")}, tmp_path / "x.json")
    assert json.loads((tmp_path / "x.json").read_text())["x"] == "inf"


# solve / verify


def test_solve_trivial(tmp_path, capsys):
    prob = write(tmp_path / "p.json", TRIVIAL_JSON)
    out = tmp_path / "plan.csv"
    code = main(["solve", "--problem", prob, "--gamma", "1", "--out", str(out)])
    assert code == 0
    assert out.read_text() == "i,j,value\n0,0,1.0\n"
    summary = json.loads((tmp_path / "plan.summary.json").read_text())
    for key in ("primal_objective", "dual_objective", "feasibility_error", "sweeps", "nnz",
                "mass_created", "mass_destroyed"):
        assert key in summary
    assert (tmp_path / "plan.potentials.json").exists()


def test_solve_malformed_json_exits_1(tmp_path, capsys):
    prob = write(tmp_path / "p.json", '{"a": [1.0],\n "b"')
    assert main(["solve", "--problem", prob, "--gamma", "1"]) == 1
    assert "byte offset" in capsys.readouterr().err


def test_solve_missing_file_exits_1(tmp_path):
    assert main(["solve", "--problem", str(tmp_path / "nope.json"), "--gamma", "1"]) == 1


def test_solve_bad_flag_exits_1(tmp_path):
    prob = write(tmp_path / "p.json", TRIVIAL_JSON)
    assert main(["solve", "--problem", prob, "--gamma", "-1"]) == 1
    assert main(["solve", "--problem", prob, "--gamma", "1", "--phi", "cubic"]) == 1


def test_solve_theta_failure_exits_2(tmp_path, capsys):
    prob = write(tmp_path / "p.json", TRIVIAL_JSON)
    code = main(["solve", "--problem", prob, "--phi", "exponential", "--varphi", "exponential",
                 "--gamma", "1e300", "--tol", "1e-300", "--out", str(tmp_path / "o.csv")])
    assert code == 2
    err = capsys.readouterr().err
    assert "theta step failed" in err and "(0, 0)" in err


def test_solve_non_convergence_exits_2_and_still_writes(tmp_path):
    p = random_simplex_instance(10, seed=0)
    prob = tmp_path / "p.json"
    io.save_problem(p, prob)
    out = tmp_path / "o.csv"
    assert main(["solve", "--problem", str(prob), "--gamma", "1000", "--max-sweeps", "2",
                 "--out", str(out)]) == 2
    assert out.exists() and (tmp_path / "o.summary.json").exists()


@pytest.fixture
def solved(tmp_path):
    p = random_simplex_instance(10, seed=3)
    prob = tmp_path / "p.json"
    io.save_problem(p, prob)
    out = tmp_path / "plan.csv"
    assert main(["solve", "--problem", str(prob), "--gamma", "100", "--out", str(out)]) == 0
    return prob, out, tmp_path / "plan.potentials.json"


def test_verify_solver_output_passes(solved, capsys):
    prob, plan, pots = solved
    capsys.readouterr()
    assert main(["verify", "--problem", str(prob), "--plan", str(plan), "--potentials", str(pots)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["failed"] == []


def test_verify_corrupted_plan_exits_3(solved, capsys):
    prob, plan, pots = solved
    lines = plan.read_text().splitlines()
    i, j, v = lines[1].split(",")
    lines[1] = f"{i},{j},{float(v) * 3!r}"
    plan.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["verify", "--problem", str(prob), "--plan", str(plan), "--potentials", str(pots)]) == 3
    assert "kkt_stationarity" in capsys.readouterr().err


def test_verify_with_exact_reports_bounds(solved, capsys):
    prob, plan, pots = solved
    capsys.readouterr()
    assert main(["verify", "--problem", str(prob), "--plan", str(plan), "--potentials", str(pots),
                 "--exact"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["prop2"]["passed"] is True
    assert {"lower_margin", "upper_margin", "cost_bound_margin", "conjugate_bound_margin"} <= set(doc["prop2"])


def test_verify_shape_mismatch_exits_1(solved, tmp_path):
    prob, plan, _ = solved
    pots = tmp_path / "small.json"
    io.save_potentials(DualPotentials(np.zeros(2), np.zeros(2)), pots, SolverConfig(gamma=100.0))
    assert main(["verify", "--problem", str(prob), "--plan", str(plan), "--potentials", str(pots)]) == 1


# experiments


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_experiment_csv_is_byte_identical_across_runs(tmp_path):
    args = ["experiment", "sparsity", "--n", "12", "--gammas", "10,100", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.meta.json").read_bytes() == (tmp_path / "b.meta.json").read_bytes()
    meta = json.loads((tmp_path / "a.meta.json").read_text())
    assert meta["rng_algorithm"] and meta["seed"] == 4


def test_sparsity_grows_toward_exact_support():
    rows = experiments.run_sparsity(n=100, gammas=(1, 10, 100, 1000, 10000), kinds=("quadratic",))
    nnz = [r["nnz"] for r in rows]
    assert all(r["status"] == "ok" for r in rows)
    assert nnz == sorted(nnz)
    assert nnz[-1] <= rows[-1]["exact_nnz"]


def test_rate_columns(tmp_path):
    out = tmp_path / "rate.csv"
    assert main(["experiment", "rate", "--gammas", "10,100,1000", "--out", str(out)]) == 0
    rows = read_rows(out)
    assert len(rows) == 3
    for key in ("ot_minus_drot", "cost_gap_abs", "conjugate_gap", "marginal_norm_a"):
        assert all(float(r[key]) >= 0 for r in rows)


def test_mass_exponential_only_destroys(tmp_path):
    out = tmp_path / "mass.csv"
    assert main(["experiment", "mass", "--n", "20", "--regularizers", "exponential",
                 "--gammas", "10,100", "--out", str(out)]) == 0
    for row in read_rows(out):
        devs = [float(v) for k, v in row.items() if k.startswith("dev_")]
        assert len(devs) == 40 and min(devs) >= -1e-8


def test_timing_rows(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["experiment", "timing", "--sizes", "51", "--out", str(out)]) == 0
    (row,) = read_rows(out)
    assert row["status"] == "ok" and float(row["seconds"]) > 0 and int(row["sweeps"]) > 0


def test_experiment_rejects_unknown_regularizer():
    assert main(["experiment", "mass", "--regularizers", "cubic"]) == 1


# colour transfer


@pytest.fixture
def images(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "src.png"
    tgt = tmp_path / "tgt.png"
    io.write_image(rng.integers(0, 256, size=(12, 10, 3), dtype=np.uint8), src)
    io.write_image(rng.integers(0, 256, size=(9, 11, 3), dtype=np.uint8), tgt)
    return src, tgt


def test_color_transfer_writes_image_and_sidecar(images, tmp_path):
    src, tgt = images
    out = tmp_path / "out.png"
    assert main(["color-transfer", "--source", str(src), "--target", str(tgt), "--k", "6",
                 "--gamma", "1000", "--out", str(out)]) == 0
    assert io.read_image(out).shape == (12, 10, 3)
    meta = json.loads((tmp_path / "out.json").read_text())
    assert meta["k"] == 6 and meta["seed"] == 42 and meta["config"]["gamma"] == 1000.0
    assert "mass_destroyed" in meta["diagnostics"]


def test_color_transfer_entropy_gets_default_shift(images, tmp_path):
    src, tgt = images
    out = tmp_path / "out.png"
    assert main(["color-transfer", "--source", str(src), "--target", str(tgt), "--k", "4",
                 "--phi", "entropy", "--varphi", "entropy", "--gamma", "1", "--out", str(out)]) == 0
    meta = json.loads((tmp_path / "out.json").read_text())
    assert meta["config"]["cost_shift"] == 1e-3


def test_color_transfer_output_is_byte_identical(images, tmp_path):
    src, tgt = images
    for name in ("a.png", "b.png"):
        assert main(["color-transfer", "--source", str(src), "--target", str(tgt), "--k", "5",
                     "--gamma", "100", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_color_transfer_missing_file_exits_1(images, tmp_path):
    src, _ = images
    assert main(["color-transfer", "--source", str(src), "--target", str(tmp_path / "none.png"),
                 "--k", "4", "--gamma", "1"]) == 1


def test_color_transfer_undecodable_file_exits_1(images, tmp_path):
    src, _ = images
    bad = write(tmp_path / "bad.png", "not an image")
    assert main(["color-transfer", "--source", str(src), "--target", bad, "--k", "4", "--gamma", "1"]) == 1


def test_console_entry_point(tmp_path):
    prob = write(tmp_path / "p.json", TRIVIAL_JSON)
    proc = subprocess.run([sys.executable, "-m", "drot.cli", "solve", "--problem", prob, "--gamma", "1",
                           "--out", str(tmp_path / "o.csv")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_image_round_trip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, size=(5, 6, 3), dtype=np.uint8)
    io.write_image(img, tmp_path / "x.png")
    np.testing.assert_array_equal(io.read_image(tmp_path / "x.png"), img)


def test_make_problem_from_file_matches_direct():
    p = io.parse_problem(TRIVIAL_JSON)
    q = make_problem([1.0], [1.0], [[0.0]])
    np.testing.assert_array_equal(p.C, q.C)
