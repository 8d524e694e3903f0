"""Smoke test of the beta_spectra extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install --force-reinstall target/wheels/beta_spectra-*.whl
"""

import json
import math

import beta_spectra as bs


def main() -> None:
    shape = bs.PotentialShape()
    c = shape.constants(1.0)
    assert abs(c.c_e0 - 4 / 17) < 1e-14, c
    assert abs(c.beta - 34) < 1e-12, c

    e2 = shape.energy_for_beta(2.0)
    assert abs(e2 - (math.sqrt(65) - 1) / 32) < 1e-10, e2

    free = bs.PotentialShape(1, 0.0)
    w = bs.operator_window(seed=1, m=200, window=3.5 * math.pi, shape=free)
    assert len(w.atoms) == 7, w.atoms
    for i, x in enumerate(w.atoms):
        assert abs(x - (i - 3) * math.pi) < 1e-8, (i, x)

    w = bs.operator_window(seed=5, alpha=1.0, m=100)
    assert not w.non_monotone
    gaps = bs.central_gaps([w.atoms], 2)
    assert len(gaps) == 2 and all(abs(g - math.pi) < 0.3 for g in gaps), gaps

    eig = bs.gbeta_eigenvalues(50, 2.0, 3)
    assert eig == sorted(eig) and len(eig) == 50
    bulk = bs.gbeta_bulk_window(200, 2.0, 3)
    assert all(abs(x) <= 3 * math.pi for x in bulk)

    d = c.d_e0
    car = bs.carousel_terminal(d, [2 * math.pi, 4 * math.pi], 7)
    sb = bs.sine_beta_terminal(34.0, [4 * math.pi, 8 * math.pi], 7)
    assert all(bs.count_from_phase(p) >= 0 for p in car + sb)

    assert bs.ks_distance([0.0, 1.0], [0.0, 1.0]) == 0.0

    cfg = json.loads(bs.default_config("clock"))
    cfg.update(amplitude=0.0, trials=1, m=50)
    report = json.loads(bs.run_experiment(json.dumps(cfg)))
    assert report["passed"], report["checks"]

    try:
        bs.run_experiment(json.dumps({"experiment": "clock", "trails": 1}))
    except ValueError as e:
        assert "trails" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
