"""Build the agetopk_py extension (if needed) and exercise it from Python.

Usage: python python/smoke_test.py
"""

import glob
import os
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    try:
        import agetopk_py
        return agetopk_py
    except ImportError:
        pass
    wheels = tempfile.mkdtemp(prefix="agetopk-wheel-")
    target = tempfile.mkdtemp(prefix="agetopk-site-")
    manifest = os.path.join(ROOT, "crates", "python", "Cargo.toml")
    subprocess.run(
        [sys.executable, "-m", "maturin", "build", "--release", "-m", manifest, "-o", wheels],
        check=True,
    )
    wheel = glob.glob(os.path.join(wheels, "*.whl"))[0]
    subprocess.run(
        [sys.executable, "-m", "pip", "install", "--no-deps", "--target", target, wheel],
        check=True,
    )
    sys.path.insert(0, target)
    import agetopk_py
    return agetopk_py


def main():
    m = load_module()

    g = [5.0, -3.0, 0.5, 2.0, -1.0]
    mask = m.select("agetopk", g, [0] * 5, 3, 2)
    assert mask == [0, 1], mask
    y = m.apply_mask(mask, g)
    assert m.scatter(mask, 5, y) == [5.0, -3.0, 0.0, 0.0, 0.0]
    print("gamma(d=100, r=30, k=20, beta=1) =", m.gamma_of(100, 30, 20, 1.0))

    ch = m.Channel("rayleigh", 1.0, sigma_z_sq=0.01)
    print(ch, "->", ch.aggregate([[1.0, 2.0], [3.0, 4.0]], seed=3))

    c = m.BoundConstants(2.0, 4.0, 1.0, 1.0, 0.5, 0.1, 0.5, 10, 10, 0.01, 3.0, 1.0)
    assert abs(c.rhs(100) - 9.67) < 1e-12

    rows = m.run({"task": "logistic", "features": 9, "classes": 3, "samples": 300,
                  "clients": 5, "rounds": 20, "eta": 0.5, "seed": 1})
    last = rows[-1]
    print("round {round}: loss {loss:.4f}, test accuracy {test_accuracy:.3f}".format(**last))
    assert len(rows) == 20
    print("smoke test passed")


if __name__ == "__main__":
    main()
