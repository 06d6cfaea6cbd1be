"""Smoke test for the Python bindings.

Run with `python python/smoke_test.py` or under pytest after
`pip install --no-build-isolation -e crates/py`.
"""

import json
import math
import pathlib
import tempfile

import onesided_py as os1

ROOT = pathlib.Path(__file__).resolve().parent.parent

SIMPLE = json.dumps({"mode": "lattice", "step": 1.0, "atoms": [[-1.0, 0.75], [1.0, 0.25]]})
X_PLUS = json.dumps({"kind": "power_plus", "nu": 1.0})


def test_expected_maximum():
    sol = json.loads(os1.solve(SIMPLE, X_PLUS, 0.0))
    assert sol["regime"]["kind"] == "finite"
    assert abs(sol["regime"]["u"] - 0.5) < 1e-3
    (v0, se), = os1.value(SIMPLE, X_PLUS, 0.0, [0.0])
    assert abs(v0 - 1.0 / 3.0) < 1e-6 and se == 0.0


def test_classify_and_root():
    sym = json.dumps({"mode": "lattice", "step": 1.0, "atoms": [[-1.0, 0.5], [1.0, 0.5]]})
    assert json.loads(os1.classify(sym, X_PLUS, 0.0))["verdict"] == "infinite"
    root = os1.mgf_root(SIMPLE, 0.0)
    assert abs(root - math.log(3.0)) < 1e-9


def test_bad_input_raises():
    try:
        os1.solve(SIMPLE, json.dumps({"kind": "power_plus", "nu": -1.0}), 0.0)
    except ValueError as e:
        assert "reward" in str(e)
    else:
        raise AssertionError("expected ValueError")


def test_run_and_schema():
    spec = (ROOT / "specs" / "expected_maximum.json").read_text()
    with tempfile.TemporaryDirectory() as out:
        code, text = os1.run(spec, out)
        assert code == 0
        report = json.loads(text)
        assert report == json.loads((pathlib.Path(out) / "report.json").read_text())
        assert "value.csv" in report["files"]
    try:
        from jsonschema import Draft202012Validator
        from referencing import Registry, Resource
    except ImportError:
        return
    problem = json.loads((ROOT / "schema" / "problem.schema.json").read_text())
    rep = json.loads((ROOT / "schema" / "report.schema.json").read_text())
    registry = Registry().with_resources(
        [(s["$id"], Resource.from_contents(s)) for s in (problem, rep)]
    )
    for path in sorted((ROOT / "specs").glob("*.json")):
        Draft202012Validator(problem, registry=registry).validate(json.loads(path.read_text()))
    Draft202012Validator(rep, registry=registry).validate(report)


def test_bench_criterion():
    ok, line = os1.bench_criterion(1)
    assert ok, line
    assert line.startswith("criterion 1 PASS")


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"{name}: ok")
