"""Smoke test for the pydsba extension module."""

import json
import math

import pydsba


def main():
    g = pydsba.Graph.random(6, 0.5, 1)
    w = g.mixing_matrix()
    assert all(abs(sum(row) - 1.0) < 1e-12 for row in w)
    assert all(ok for _, ok in g.check_mixing())
    assert not all(ok for _, ok in g.check_mixing(tau_scale=0.5))

    z = pydsba.resolvent("ridge", [1.0, 0.0], 1.0, 1.0, [0.0, 0.0])
    assert abs(z[0] - 0.5) < 1e-12 and z[1] == 0.0

    exp = pydsba.Experiment.synthetic(g, "ridge", 120, 20, density=0.3, noise=0.1, seed=2)
    rows, iterates = exp.simulate("dsba", rounds=2000, comm="sparse")
    assert len(iterates) == 6 and len(iterates[0]) == exp.dim
    assert rows[0]["subopt"] > rows[-1]["subopt"]
    print(f"{exp!r}: subopt {rows[-1]['subopt']:.3e} after {rows[-1]['round']} rounds")

    auc = pydsba.Experiment.synthetic(pydsba.Graph.complete(3), "auc", 90, 10, seed=3)
    rows, _ = auc.simulate("dsba", rounds=30 * auc.q_min)
    assert rows[-1]["score"] > 0.9 and not math.isnan(rows[-1]["score"])

    cfg = {
        "variant": "dsa",
        "family": "ridge",
        "graph": {"kind": "path", "n_nodes": 4},
        "data": {"source": "synthetic", "kind": "regression", "n_samples": 40,
                 "dim": 5, "density": 1.0, "noise": 0.1, "seed": 4},
        "rounds": 50,
        "comm": "dense",
        "seed": 4,
    }
    csv, manifest = pydsba.run(json.dumps(cfg))
    assert csv.startswith("round,effective_passes,subopt")
    assert json.loads(manifest)["rounds_run"] == 50
    print("pydsba", pydsba.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
