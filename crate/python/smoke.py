"""Smoke test for the cran_swipt_py extension module."""

import json
import math

import cran_swipt_py as cs


def main():
    topo = cs.Topology.generate(7)
    assert (topo.n_rrh, topo.n_it, topo.n_et) == (3, 4, 7)
    assert cs.Topology.from_json(topo.to_json()).to_json() == topo.to_json()

    params = cs.SystemParams()
    params.validate()
    assert math.isclose(params.free_charge_range(1.0), (0.8 / 1e-5) ** 0.4, rel_tol=1e-12)

    ch = cs.Channels.draw(topo, 7, 0)
    results = {a: cs.run_division(a, topo, ch, params) for a in ("alg1", "alg2", "all_fet", "all_met", "brute_force")}
    for name, r in results.items():
        assert r.feasible, name
        json.loads(r.to_json())
    best = results["brute_force"].objective
    assert all(r.objective >= best - 1e-9 for r in results.values())
    print("objectives (W):", {k: round(v.objective, 6) for k, v in results.items()})

    freq, frozen = cs.training_stage(topo, 7, params, q_training=4)
    assert len(freq) == 7 and all(0.0 <= f <= 1.0 for f in freq)
    slots = cs.longterm_stage(topo, 7, frozen, params, first_slot=4, q_longterm=3)
    assert len(slots) == 3
    print("frozen division:", format(frozen, "07b")[::-1], "long-term objectives:", slots)

    csv, _ = cs.run_experiment("single-slot", "run.n_trials = 1\ntopology.n_et = 3")
    assert len(csv.strip().splitlines()) == 1 + 5

    try:
        cs.run_division("alg9", topo, ch, params)
    except cs.CranSwiptError:
        pass
    else:
        raise AssertionError("unknown algorithm accepted")

    passed, report = cs.validate("validate.instances = 1\ntopology.n_et = 3")
    assert passed, report
    print("smoke ok")


if __name__ == "__main__":
    main()
