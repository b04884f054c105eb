import math

from gmfuse import aware_ssm
from gmfuse.selftest import run_selftest
from gmfuse.tensor import Tensor, exp


def test_all_suites_pass():
    report = run_selftest()
    assert report["passed"], [s for s in report["suites"] if not s["passed"]]
    assert report["n_suites"] >= 9


def test_flipped_decay_sign_is_caught(monkeypatch):
    def flipped(d, lam, d_max):
        ratio = Tensor((d / d_max)[:, None])
        return exp(ratio * lam)

    monkeypatch.setattr(aware_ssm, "decay_factor", flipped)
    report = run_selftest()
    by_name = {s["name"]: s for s in report["suites"]}
    assert not by_name["decay-monotonicity"]["passed"]
    assert not report["passed"]
    assert by_name["scan-oracle"]["passed"]
    assert isinstance(by_name["decay-monotonicity"]["seed"], int)


def test_report_is_json_ready():
    import json

    report = run_selftest(names={"recurrence-identity"})
    assert json.loads(json.dumps(report))["n_suites"] == 1
    assert not math.isnan(report["suites"][0]["seconds"])
