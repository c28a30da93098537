#!/usr/bin/env python3
"""Smoke test for the bell_lab_py extension module.

Builds the cdylib if needed, copies it next to this script under the
importable name, and exercises every exported function.

Usage: python python/smoke_test.py
"""

import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "bell-lab-py", "--release"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libbell_lab_py.so"
    target = HERE / "bell_lab_py.so"
    shutil.copy2(built, target)
    sys.path.insert(0, str(HERE))
    import bell_lab_py

    return bell_lab_py


def main():
    m = build_and_import()

    # Closed-form helpers.
    s = m.chsh_s([0.5, 0.5, 0.5, -0.5])
    assert abs(s - 2.0) < 1e-12, s

    assert abs(m.quantum_correlation(0.0, 0.0) - 1.0) < 1e-12
    assert abs(m.quantum_correlation(0.0, 45.0)) < 1e-12
    assert abs(m.quantum_correlation(0.0, 22.5) - math.sqrt(0.5)) < 1e-12

    a, a2, b, b2 = m.chsh_optimal_settings()
    e = (
        m.quantum_correlation(a, b)
        + m.quantum_correlation(a, b2)
        + m.quantum_correlation(a2, b)
        - m.quantum_correlation(a2, b2)
    )
    assert abs(e - 2.0 * math.sqrt(2.0)) < 1e-12, e

    # Optimizer.
    s_max, s_lp, s_fb = m.max_chsh_at_efficiency(1.0)
    assert abs(s_max - 2.0) < 1e-9, s_max
    crit = m.critical_efficiency(2.0 * math.sqrt(2.0))
    assert 0.818 <= crit <= 0.838, crit

    # Scenario runner + reanalysis.
    with tempfile.TemporaryDirectory() as tmp:
        config = {
            "source": {"kind": "quantum"},
            "n_trials": 50_000,
            "seed": 11,
        }
        results = json.loads(m.run_scenario(json.dumps(config), tmp))
        assert results["schema_version"] == 1
        assert abs(results["chsh"]["s"] - 2.828) < 0.05, results["chsh"]["s"]
        assert results["chsh"]["violates"] is True

        reanalyzed = json.loads(
            m.analyze_logs(
                f"{tmp}/alice.ndjson",
                f"{tmp}/bob.ndjson",
                f"{tmp}/reanalysis",
            )
        )
        assert reanalyzed["chsh"]["s"] == results["chsh"]["s"]

        # Bad config is rejected with a diagnostic, not a crash.
        try:
            m.run_scenario('{"source": {"kind": "quantum"}}', tmp)
        except ValueError:
            pass
        else:
            raise AssertionError("config without n_trials should be rejected")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
