"""Smoke test for the stocontract extension module."""

import json
import math

import stocontract as sc


def main():
    theta = sc.factor_metric([[4.0, 0.0], [0.0, 9.0]])
    assert theta == [[2.0, 0.0], [0.0, 3.0]]
    assert abs(sc.metric_distance([1.0, 0.0], [0.0, 0.0], [[4.0, 0.0], [0.0, 9.0]]) - 2.0) < 1e-15

    ident = [[1.0, 0.0], [0.0, 1.0]]
    assert abs(sc.contraction_factor([[0.5, 0.0], [0.0, 0.3]], ident, ident) - 0.25) < 1e-12

    r = sc.discrete_ms_bound(0.25, 1.0)
    assert r.theorem_tag == "thm1-ms"
    assert abs(r.asymptotic_bound - 8.0 / 3.0) < 1e-12
    assert abs(r.noise_free().asymptotic_bound - 4.0 / 3.0) < 1e-12

    h = sc.hybrid_bound(0.5, 0.0, 1.0, 1.0, 1.0)
    assert h.theorem_tag == "thm3" and abs(h.asymptotic_bound - 10.0) < 1e-12
    assert sc.classify_regime(0.9, -1.0, 1.0) == "thm4-unbounded"
    assert math.isinf(sc.hybrid_bound(0.9, -1.0, 1.0, 1.0, 1.0).asymptotic_bound)

    try:
        sc.discrete_ms_bound(1.5, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("beta >= 1 must raise")

    cfg = sc.ExperimentConfig.builtin("ou1d")
    cfg.set_ensemble(500, 50.0, 3)
    cert = json.loads(cfg.certify())
    assert abs(cert["certificates"][0]["rate"] - 0.25) < 1e-9
    csv, verdict = cfg.simulate()
    assert csv.startswith("time,side,mean_sq_dist,stderr,n_alive")
    assert verdict is True
    assert sc.ExperimentConfig.from_json(cfg.to_json()).to_json() == cfg.to_json()

    assert sc.hopf_drift(1.0, 0.0) == (0.0, 1.0)
    assert sc.hopf_sym_max(1.0, 1.0) == -1.0
    assert abs(sc.reduced_discrete_factor(0.2) - 0.52) < 1e-15
    assert sc.sync_condition(0.2, 0.1) and not sc.sync_condition(0.01, 0.1)
    assert abs(sc.phase_locking_delta([1.0, 0.0] * 3) - 9.0) < 1e-12
    closed, pipeline, caption = sc.theoretical_delta_bound()
    assert abs(closed - 0.0461) < 1e-4 and caption == 0.446
    summary = json.loads(sc.run_cpg(runs=8, horizon=5.0))
    assert summary["sync_condition"] is True

    print("smoke test passed")


if __name__ == "__main__":
    main()
