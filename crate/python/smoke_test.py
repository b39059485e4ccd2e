#!/usr/bin/env python3
"""Smoke test for the _hjcanon extension module.

Builds nothing itself: run `cargo build -p hjcanon-py` (or --release)
first, then `python3 python/smoke_test.py [--release]`.
"""

import argparse
import math
import shutil
import sys
import sysconfig
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent

OSCILLATOR = """
system {
  coordinates: q;
  order: 1;
  lagrangian: q'^2/2 - q^2/2;
}
"""

FREE = """
system {
  coordinates: q;
  order: 1;
  lagrangian: q'^2/2;
}
"""

S2 = """
system {
  coordinates: q1, q2;
  order: 2;
  lagrangian: (q1'' - q2')^2/2;
}
"""

JET2 = """
system {
  coordinates: q;
  order: 2;
  lagrangian: q''^2/2;
}
"""


def import_extension(profile: str):
    built = REPO / "target" / profile / "lib_hjcanon.so"
    if not built.exists():
        sys.exit(
            f"missing {built}; run `cargo build -p hjcanon-py"
            + (" --release`" if profile == "release" else "`")
        )
    stage = Path(tempfile.mkdtemp(prefix="hjcanon-py-"))
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy2(built, stage / f"_hjcanon{suffix}")
    sys.path.insert(0, str(stage))
    import _hjcanon  # noqa: E402

    return _hjcanon


def approx(a, b, tol):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--release", action="store_true")
    args = parser.parse_args()
    hj = import_extension("release" if args.release else "debug")
    print(f"loaded _hjcanon {hj.__version__}")

    # system parsing
    system = hj.System(S2)
    assert system.coordinates == ["q1", "q2"]
    assert system.order == 2
    print(f"parsed: {system!r}")

    # full analysis of the singular second-order system
    analysis = hj.analyze(S2)
    assert analysis.status == "closed_first_class", analysis.status
    assert analysis.generic_rank == 1
    assert analysis.degenerate == ["q2"]
    assert analysis.iterations == 3
    assert len(analysis.constraints) == 3
    labels = [g[0] for g in analysis.generators]
    assert labels == ["H'0", "H'(1)2", "H'(0)2", "H'(0)1"], labels
    report = analysis.report_json()
    assert '"closed_first_class"' in report
    print(f"analysis: {analysis!r}")
    print("constraint chain:", analysis.constraints)

    # bracket sanity
    assert hj.bracket(OSCILLATOR, "q", "p") == "1"

    # oscillator trajectory: q(1) close to cos(1)
    traj = hj.integrate(OSCILLATOR, init={"q": 1.0, "p": 0.0}, t_end=1.0, dt=1e-3)
    approx(traj["q"][-1], math.cos(1.0), 1e-8)
    approx(traj["constraint_drift"], 0.0, 1e-12)
    approx(traj["Z"][-1], traj["lagrangian_integral"], 1e-6)
    print(f"oscillator q(1) = {traj['q'][-1]:.12f} (cos 1 = {math.cos(1.0):.12f})")

    # free-particle propagator modulus is exact at any slice count
    modulus, phase = hj.propagate(FREE, 0.0, 1.0, 1.0, slices=32)
    approx(modulus, 1.0 / math.sqrt(2.0 * math.pi), 1e-12)
    assert -math.pi < phase <= math.pi
    print(f"free propagator modulus = {modulus:.12f}, phase = {phase:.6f}")

    # order reduction emits re-analyzable text
    reduced = hj.reduce_order(JET2)
    assert "order: 1" in reduced
    re_analysis = hj.analyze(reduced)
    assert len(re_analysis.generators) >= 3
    print("order reduction:", reduced.replace("\n", " ").strip())

    print("smoke test: OK")


if __name__ == "__main__":
    main()
