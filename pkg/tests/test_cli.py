import io
import json

import numpy as np
import pytest

from miso.cli import (
    ExperimentSpec,
    LibsvmFormatError,
    gen_data,
    main,
    read_libsvm,
    read_trace_csv,
    spec_from_dict,
    write_libsvm,
    write_trace_csv,
)
from miso.problems import LogisticL2Problem
from miso.solvers import SolverConfig, TraceRecord, run


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def csv_without_seconds(path):
    rows = [line.split(",") for line in open(path).read().splitlines()]
    col = rows[0].index("seconds")
    return [r[:col] + r[col + 1:] for r in rows]


# ---------------------------------------------------------------------------
# LIBSVM
# ---------------------------------------------------------------------------

def test_read_libsvm_example(tmp_path):
    path = write(tmp_path, "a.svm", "# header\n+1 1:0.5 3:2\n\n-1 2:1.5  # trailing\n")
    d = read_libsvm(path)
    assert d.is_sparse and d.X.shape == (2, 3)
    np.testing.assert_array_equal(d.y, [1, -1])
    np.testing.assert_array_equal(d.X.toarray(), [[0.5, 0, 2], [0, 1.5, 0]])
    assert read_libsvm(path, p=5).X.shape == (2, 5)
    with pytest.raises(LibsvmFormatError):
        read_libsvm(path, p=2)


@pytest.mark.parametrize("text,lineno", [
    ("1 1:1\n1 0:2\n", 2),
    ("1 2:1 1:3\n", 1),
    ("1 1:1\nfoo 1:1\n", 2),
    ("1 1:1\n1 1:x\n", 2),
    ("1 1:1\n\n1 3\n", 3),
])
def test_read_libsvm_errors_carry_line_numbers(tmp_path, text, lineno):
    with pytest.raises(LibsvmFormatError) as info:
        read_libsvm(write(tmp_path, "bad.svm", text))
    assert info.value.lineno == lineno
    assert f"line {lineno}" in str(info.value)


def test_read_libsvm_empty(tmp_path):
    with pytest.raises(LibsvmFormatError):
        read_libsvm(write(tmp_path, "e.svm", "# nothing\n\n"))


def test_libsvm_round_trip(tmp_path):
    d = gen_data("sparse_bernoulli_gaussian", 40, 7, density=0.3, seed=3)
    path = str(tmp_path / "d.svm")
    write_libsvm(d, path)
    back = read_libsvm(path, p=7)
    np.testing.assert_array_equal(back.X.toarray(), d.X.toarray())
    np.testing.assert_array_equal(back.y, d.y)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def test_gen_data_deterministic_and_storage():
    a = gen_data("dense_gaussian", 30, 4, seed=1)
    b = gen_data("dense_gaussian", 30, 4, seed=1)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    assert not a.is_sparse and set(np.unique(a.y)) <= {-1.0, 1.0}
    s = gen_data("sparse_bernoulli_gaussian", 200, 50, density=0.1, seed=1)
    assert s.is_sparse and 0.05 < s.X.nnz / (200 * 50) < 0.15
    assert not gen_data("sparse_bernoulli_gaussian", 10, 3, density=1.0, seed=0).is_sparse
    with pytest.raises(ValueError):
        gen_data("nope", 10, 3)


def test_planted_logistic_model_is_learnable():
    d = gen_data("dense_gaussian", 1000, 20, seed=0, scale=5.0)
    res = run(SolverConfig(scheme="miso1", epochs=30), LogisticL2Problem(d, 1e-3))
    assert np.mean(np.sign(d.X @ res.theta) == d.y) > 0.9


def test_linear_noise_support():
    d, w = gen_data("dense_gaussian", 100, 10, label_model="linear_noise", support=3, sigma=0.0,
                    seed=2, return_truth=True)
    assert np.count_nonzero(w) == 3
    np.testing.assert_allclose(d.y, d.X @ w, atol=1e-12)


# ---------------------------------------------------------------------------
# traces and configs
# ---------------------------------------------------------------------------

def test_trace_csv_round_trip():
    rows = [TraceRecord(0.0, 0.1, 0.69, 0.5, 0.2, 3), TraceRecord(1.5, 0.2, 0.3, None, 1e-9, 2)]
    buf = io.StringIO()
    write_trace_csv(rows, buf)
    assert buf.getvalue().splitlines()[0] == "pass,seconds,objective,duality_gap,stationarity,nnz"
    back = read_trace_csv(io.StringIO(buf.getvalue()))
    assert [r.objective for r in back] == [0.69, 0.3]
    assert back[1].duality_gap is None and back[0].nnz == 3
    with pytest.raises(ValueError):
        read_trace_csv(io.StringIO("pass,objective\n0,1\n"))


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec(problem="lasso", lam=0.1).validate()
    with pytest.raises(ValueError):
        ExperimentSpec(lambda_path=[0.1, 0.2]).validate()
    with pytest.raises(ValueError):
        ExperimentSpec().validate()
    ExperimentSpec(problem="sparse_log", target_nnz=3).validate()
    spec = spec_from_dict({"lambda": 0.1, "solver": {"scheme": "sag"}})
    assert spec.lam == 0.1 and spec.solver.scheme == "sag"
    with pytest.raises(ValueError):
        spec_from_dict({"lambda": 0.1, "colour": "red"})


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------

@pytest.fixture
def logistic_file(tmp_path):
    path = str(tmp_path / "train.svm")
    assert main(["gen-data", "--T", "200", "--p", "8", "--seed", "1", "--out", path]) == 0
    return path


def test_solve_logistic_reaches_small_gap(tmp_path, logistic_file):
    out = str(tmp_path / "t.csv")
    theta_out = str(tmp_path / "theta.txt")
    code = main(["solve", "--data", logistic_file, "--lambda", "0.01", "--scheme", "miso1",
                 "--epochs", "60", "--trace", out, "--theta-out", theta_out])
    assert code == 0
    trace = read_trace_csv(open(out))
    assert trace[-1].duality_gap <= 1e-8
    assert np.loadtxt(theta_out).shape == (8,)


def test_solve_is_reproducible_with_env_seed(tmp_path, logistic_file, monkeypatch):
    monkeypatch.setenv("MISO_SEED", "7")
    paths = []
    for k in range(2):
        out = str(tmp_path / f"t{k}.csv")
        assert main(["solve", "--data", logistic_file, "--lambda", "0.01", "--epochs", "3",
                     "--trace", out]) == 0
        paths.append(out)
    assert csv_without_seconds(paths[0]) == csv_without_seconds(paths[1])
    monkeypatch.setenv("MISO_SEED", "8")
    other = str(tmp_path / "t2.csv")
    main(["solve", "--data", logistic_file, "--lambda", "0.01", "--epochs", "3", "--trace", other])
    assert csv_without_seconds(other) != csv_without_seconds(paths[0])
    flag = str(tmp_path / "t3.csv")
    main(["solve", "--data", logistic_file, "--lambda", "0.01", "--epochs", "3", "--seed", "7",
          "--trace", flag])
    assert csv_without_seconds(flag) == csv_without_seconds(paths[0])


def test_json_config_and_lambda_path(tmp_path):
    cfg = {
        "problem": "sparse_log",
        "data": {"kind": "dense_gaussian", "T": 150, "p": 12, "label_model": "linear_noise",
                 "support": 3, "seed": 0},
        "lambda_path": [0.08, 0.04, 0.02],
        "solver": {"scheme": "miso1", "epochs": 15},
        "output": str(tmp_path / "path.csv"),
    }
    path = write(tmp_path, "exp.json", json.dumps(cfg))
    assert main(["solve", "--config", path]) == 0
    trace = read_trace_csv(open(cfg["output"]))
    passes = [r.pass_count for r in trace]
    assert all(b >= a for a, b in zip(passes, passes[1:]))
    objs = [r.objective for r in trace]
    # within one lambda the objective never increases at record points
    seg = len(trace) // 3
    assert all(b <= a + 1e-10 for a, b in zip(objs[-seg + 1:], objs[-seg + 2:]))
    cfg["lambda_path"] = [0.02, 0.04]
    assert main(["solve", "--config", write(tmp_path, "bad.json", json.dumps(cfg))]) == 2


@pytest.mark.parametrize("scheme", ["batch_mm", "miso0"])
def test_sparse_log_objective_nonincreasing(tmp_path, scheme):
    data = str(tmp_path / "lin.svm")
    main(["gen-data", "--T", "200", "--p", "15", "--label-model", "linear_noise", "--support", "4",
          "--seed", "2", "--out", data])
    out = str(tmp_path / "s.csv")
    assert main(["solve", "--problem", "sparse_log", "--data", data, "--lambda", "0.02",
                 "--scheme", scheme, "--epochs", "20", "--trace", out]) == 0
    objs = [r.objective for r in read_trace_csv(open(out))]
    assert all(b <= a + 1e-10 for a, b in zip(objs[1:], objs[2:]))


def test_exit_codes(tmp_path, logistic_file, capsys):
    assert main(["solve", "--data", str(tmp_path / "missing.svm"), "--lambda", "0.1"]) == 2
    bad = write(tmp_path, "bad.svm", "1 1:1\n1 0:1\n")
    assert main(["solve", "--data", bad, "--lambda", "0.1"]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["solve", "--data", logistic_file, "--lambda", "0.1", "--scheme", "nope"]) == 2
    assert main(["solve", "--data", logistic_file, "--lambda", "-1"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["solve", "--epochs", "abc"])
    assert info.value.code == 2
    big = str(tmp_path / "big.svm")
    main(["gen-data", "--T", "10", "--p", "20", "--scale", "5", "--seed", "0", "--out", big])
    cfg = {"data": big, "lambda": 1e-4, "preprocess": False,
           "solver": {"scheme": "miso_mu", "epochs": 50}}
    assert main(["solve", "--config", write(tmp_path, "div.json", json.dumps(cfg))]) == 3
    assert "diverged" in capsys.readouterr().err


def test_bench_merges_traces(tmp_path, logistic_file):
    out = str(tmp_path / "bench.csv")
    assert main(["bench", "--data", logistic_file, "--lambda", "0.01", "--epochs", "2",
                 "--schemes", "miso0,sag", "--seeds", "0,1", "--trace", out]) == 0
    lines = open(out).read().splitlines()
    assert lines[0].startswith("scheme,seed,pass,seconds")
    assert {tuple(l.split(",")[:2]) for l in lines[1:]} == {("miso0", "0"), ("miso0", "1"),
                                                            ("sag", "0"), ("sag", "1")}


def test_check_surrogates_command(capsys):
    assert main(["check-surrogates", "--problems", "2", "--samples", "200"]) == 0
    out = capsys.readouterr().out
    assert "lipschitz_gradient" in out and "jensen_0" in out
