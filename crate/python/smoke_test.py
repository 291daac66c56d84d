"""Quick end-to-end check of the Python bindings.

Build and install first:

    pip install maturin
    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import math
import pathlib
import tempfile

import judgeflow

ROOT = pathlib.Path(__file__).resolve().parent.parent


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol


def main():
    q = judgeflow.derive_quality(0.3, 0.1, 0.2)
    assert close(q["p_pass"], 0.7 * 0.9 + 0.3 * 0.2)
    assert close(q["q_acc"], 0.63 / q["p_pass"])

    inst = judgeflow.Instance.load(str(ROOT / "instances" / "fig2a.toml"))
    assert inst.num_classes == 1
    sol = judgeflow.solve(inst)
    assert close(sol["objective"], 58.73)
    assert close(sol["classes"][0]["phi"], 0.968784)

    report = judgeflow.phases(inst)
    assert report["regime"] == "abundant_workers"
    assert close(report["phi_star"], sol["classes"][0]["phi"])

    same = judgeflow.Instance.from_toml(inst.to_toml())
    assert judgeflow.solve(same)["objective"] == sol["objective"]

    two = judgeflow.Instance.load(str(ROOT / "instances" / "fig3.toml"))
    interval = judgeflow.phases(two)["complementarity_interval"]
    assert interval[0] < interval[1]

    plan = judgeflow.capacity_plan(judgeflow.Instance.load(str(ROOT / "instances" / "fig6.toml")))
    assert close(plan["n_w"] + plan["n_j"], 10.0)

    fb = judgeflow.solve(judgeflow.Instance.load(str(ROOT / "instances" / "fig4.toml")), feedback=True)
    assert "x_fb" in fb["classes"][0]

    run = judgeflow.simulate(inst, scale=2, horizon=60.0, warmup=10.0, seed=3)
    again = judgeflow.simulate(inst, scale=2, horizon=60.0, warmup=10.0, seed=3)
    assert run["metrics"]["throughput_rate"] == again["metrics"]["throughput_rate"]
    assert run["metrics"]["throughput_rate"] > 0
    assert run["policy"] == "fluid_tracking"

    with tempfile.TemporaryDirectory() as d:
        cols = judgeflow.figure("2a", out_dir=d)
        assert len(cols["n_h"]) == len(cols["phi_lp"])
        assert (pathlib.Path(d) / "fig2a.svg").exists()

    try:
        judgeflow.simulate(inst, policy="bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown policy accepted")

    assert not math.isnan(sol["objective"])
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
