"""Smoke test for the Python extension.

Build and run:

    cargo build -p ptl-py --release --features extension-module
    cp target/release/libptl.so python/ptl.so
    python3 python/smoke_test.py

or `maturin develop -m crates/python/Cargo.toml` and run the script directly.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import ptl

TINY = """
[train]
heads = 2
iterations = 200
lr0 = 2e-3
collocation_n = 40
layer_widths = [16, 16, 20]
hidden_columns = 10
log_every = 0
"""


def main():
    # cascade bookkeeping: cubic, order 2 has the single term -3 x0^2 x1
    terms = ptl.cascade_terms(3, 0.5, 2)
    assert terms[1] == [(-3.0, [2, 1, 0])], terms
    assert ptl.multi_indices(3, 3, 3) == [[1, 2, 0, 0], [2, 0, 1, 0]], ptl.multi_indices(3, 3, 3)

    eq = ptl.DuffingParams(0.3, 1.0, 0.5, 0.5, 1.2, 1.0)
    t = [i * 0.05 for i in range(101)]
    x, v = ptl.integrate_duffing(eq, t)
    assert x[0] == 1.0 and v[0] == 0.0

    # beta = 0 against the closed form of an undamped, unforced oscillator
    lin = ptl.DuffingParams(0.0, 4.0, 0.0, 0.0, 1.0, 0.7)
    xl, _ = ptl.integrate_duffing(lin, t)
    exact = [0.7 * math.cos(2.0 * s) for s in t]
    linf, rel = ptl.compare(xl, exact)
    assert linf < 1e-8, linf

    ckpt = ptl.train(TINY)
    assert len(ckpt.parameter_sets) == 2
    assert ckpt.final_loss is not None and math.isfinite(ckpt.final_loss)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "c.json")
        ckpt.save(path)
        again = ptl.Checkpoint.load(path)
        assert again.hash() == ckpt.hash()

    solver = ptl.Solver(ckpt, transfer_points=80, eval_points=101)
    out = solver.solve(eq, p=4)
    assert len(out["x"]) == 101 and out["t"] == solver.grid
    assert abs(out["x"][0] - 1.0) < 0.2
    assert math.isfinite(out["residual_loss"])

    try:
        ptl.DuffingParams(0.3, 1.0, 0.5, 0.5, float("nan"), 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("nan parameter accepted")
    try:
        ptl.integrate_duffing(eq, t, max_steps=2)
    except ArithmeticError:
        pass
    else:
        raise AssertionError("step limit not reported")

    print("smoke test passed:", eq, "residual_loss = %.3e" % out["residual_loss"])


if __name__ == "__main__":
    main()
