import json
import math
from pathlib import Path

import numpy as np

from hypofk.cli import main


def _write(path: Path, cfg: dict) -> str:
    path.write_text(json.dumps(cfg))
    return str(path)


def _read_json(out_dir: Path, name: str) -> dict:
    return json.loads((out_dir / name).read_text())


BM_PROBLEM = {
    "kind": "sde", "n": 1, "d": 1,
    "sigma": [["1"]], "drift": ["0"],
    "domain": {"type": "box", "lows": [-1.0], "highs": [1.0]},
}

LANGEVIN_PROBLEM = {
    "kind": "sde", "n": 2, "d": 1,
    "sigma": [["0"], ["1"]], "drift": ["x2", "0"],
    "domain": {"type": "all"},
}

EMBEDDED_PROBLEM = {
    "kind": "sde", "n": 2, "d": 1,
    "sigma": [["1"], ["0"]], "drift": ["0", "0"],
    "domain": {"type": "all"},
}


def test_check_hormander_embedded_fails(tmp_path):
    cfg = {"problem": EMBEDDED_PROBLEM,
           "task": {"points": [[0.0, 0.0], [1.0, -1.0]], "depth": 3}}
    rc = main(["check-hormander", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 1
    payload = _read_json(tmp_path / "out", "check_hormander.json")
    assert all(r["rank"] == 1 for r in payload["results"]["reports"])
    assert not payload["results"]["all_satisfied"]


def test_check_hormander_langevin_passes(tmp_path):
    cfg = {"problem": LANGEVIN_PROBLEM, "task": {"points": [[0.3, 0.7]], "depth": 0}}
    rc = main(["check-hormander", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "check_hormander.json")
    assert payload["results"]["reports"][0]["rank"] == 2


def test_check_hormander_sle_passes(tmp_path):
    cfg = {
        "problem": {"kind": "sle", "kappa": 2.0, "x0": [0.0, 1.0, 2.0]},
        "task": {"points": [[0.0, 1.0, 2.0], [-1.0, 0.5, 3.0]], "depth": 2},
    }
    rc = main(["check-hormander", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0


def test_solve_parabolic_trivial_normalization(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "observable": {"g": "0", "h": "0", "psi": "1"},
        "numerics": {"dt": 1e-3, "T": 0.5, "n_paths": 200, "seed": 7},
        "task": {"mode": "parabolic",
                 "launch": {"points": [[0.0], [0.5]], "times": [0.0]}},
    }
    rc = main(["solve", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "solve.json")
    for e in payload["results"]["estimates"]:
        assert e["mean"] == 1.0 and e["std_error"] == 0.0
    csv_text = (tmp_path / "out" / "solve.csv").read_text()
    assert csv_text.splitlines()[0] == "x1,t,mean,std_error"


def test_solve_survival_zero_window(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "numerics": {"dt": 1e-3, "T": 0.25, "n_paths": 100, "seed": 7},
        "task": {"mode": "survival",
                 "launch": {"points": [[0.0]], "times": [0.25]}},
    }
    rc = main(["solve", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "solve.json")
    assert payload["results"]["estimates"][0]["mean"] == 1.0


def test_solve_harmonic_mean_exit_time(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "observable": {"g": "0", "h": "1", "psi": "0"},
        "numerics": {"dt": 1e-3, "n_paths": 3000, "seed": 11,
                     "bridge_correction": True},
        "task": {"mode": "harmonic", "criterion": "b",
                 "launch": {"points": [[0.0]]}},
    }
    rc = main(["solve", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "solve.json")
    est = payload["results"]["estimates"][0]
    assert abs(est["mean"] - 1.0) < max(3 * est["std_error"], 0.03)


def test_solve_flags_divergence_exit_code(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "observable": {"g": "1.3", "h": "0", "psi": "1"},
        "numerics": {"dt": 1e-3, "n_paths": 10000, "seed": 5},
        "task": {"mode": "harmonic", "criterion": "c",
                 "launch": {"points": [[0.0]]}},
    }
    rc = main(["solve", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 3
    payload = _read_json(tmp_path / "out", "solve.json")
    assert payload["results"]["flagged_unreliable"]


def test_verify_strong_exact_solution(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "observable": {"g": "0", "h": "1", "psi": "0"},
        "task": {"mode": "strong", "f": "1 - x1*x1",
                 "points": [[0.0], [0.5], [-0.9]], "tol": 1e-12},
    }
    rc = main(["verify", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "verify.json")
    assert payload["results"]["max_residual"] <= 1e-12


def test_verify_drift_pass_and_fail(tmp_path):
    base = {
        "problem": {"kind": "sde", "n": 1, "d": 1, "sigma": [["1"]],
                    "drift": ["0"], "domain": {"type": "all"}},
        "numerics": {"dt": 1e-3, "n_paths": 4000, "seed": 13},
    }
    cfg = dict(base, task={"mode": "drift", "f": "x1", "x0": [0.0],
                           "probes": [0.1, 0.2]})
    rc = main(["verify", "--config", _write(tmp_path / "a.json", cfg),
               "--out", str(tmp_path / "out_a")])
    assert rc == 0
    cfg_bad = dict(base, task={"mode": "drift", "f": "x1 + 0.3*t", "x0": [0.0],
                               "probes": [0.1, 0.2]})
    rc = main(["verify", "--config", _write(tmp_path / "b.json", cfg_bad),
               "--out", str(tmp_path / "out_b")])
    assert rc == 1


def test_verify_weak_from_solve_output(tmp_path):
    solve_cfg = {
        "problem": BM_PROBLEM,
        "observable": {"g": "-1", "h": "0", "psi": "1"},
        "numerics": {"dt": 2e-3, "T": 1.0, "n_paths": 400, "seed": 17,
                     "bridge_correction": True},
        "task": {"mode": "parabolic",
                 "launch": {"axes": [list(np.linspace(-1, 1, 17))],
                            "times": list(np.linspace(0, 1, 17))}},
    }
    rc = main(["solve", "--config", _write(tmp_path / "s.json", solve_cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    verify_cfg = {
        "task": {"mode": "weak",
                 "field": str(tmp_path / "out" / "solve.json"),
                 "bumps": [{"centers": [0.0], "halfwidths": [0.6],
                            "t_center": 0.5, "t_halfwidth": 0.4}]},
    }
    rc = main(["verify", "--config", _write(tmp_path / "v.json", verify_cfg),
               "--out", str(tmp_path / "outv")])
    assert rc == 0
    payload = _read_json(tmp_path / "outv", "verify.json")
    assert payload["results"]["bumps"][0]["passed"]


def test_bpz_check(tmp_path):
    cfg = {
        "problem": {"kind": "sle", "kappa": 4.0, "x0": [0.0, 1.0],
                    "weights": [0.25]},
        "task": {"f": "(x2 - x1)^0.5", "points": [[0.0, 1.0], [0.5, 3.0]],
                 "tol": 1e-10},
    }
    rc = main(["bpz-check", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    cfg["task"]["f"] = "x2 - x1"  # wrong weight for this f
    rc = main(["bpz-check", "--config", _write(tmp_path / "c2.json", cfg),
               "--out", str(tmp_path / "out2")])
    assert rc == 1


def test_sle_sim(tmp_path):
    cfg = {
        "problem": {"kind": "sle", "kappa": 6.0, "x0": [0.0, 0.4],
                    "weights": [1.0]},
        "numerics": {"dt": 1e-4, "T": 0.2, "n_paths": 500, "seed": 19},
        "task": {"observable_f": "x2 - x1", "dump_paths": 2},
    }
    rc = main(["sle-sim", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "sle_sim.json")
    res = payload["results"]
    assert 0.0 <= res["collision_fraction"] <= 1.0
    assert res["collision_fraction"] + res["survival_fraction"] == 1.0
    assert (tmp_path / "out" / "path_0000.csv").exists()


def test_oracle_command(tmp_path):
    cfg = {"task": {"kind": "expC", "params": {"C": 0.5}}}
    rc = main(["oracle", "--config", _write(tmp_path / "c.json", cfg),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    payload = _read_json(tmp_path / "out", "oracle.json")
    assert abs(payload["results"]["value"] - 1.0 / math.cos(1.0)) < 1e-12
    cfg = {"task": {"kind": "expC", "params": {"C": 1.3}}}
    rc = main(["oracle", "--config", _write(tmp_path / "c2.json", cfg),
               "--out", str(tmp_path / "out2")])
    payload = _read_json(tmp_path / "out2", "oracle.json")
    assert payload["results"]["divergent"]


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 2
    cfg = {"problem": {"kind": "sde", "n": 1, "d": 1, "sigma": [["x9"]],
                       "drift": ["0"]}, "task": {"mode": "harmonic"}}
    assert main(["solve", "--config", _write(tmp_path / "c.json", cfg),
                 "--out", str(tmp_path)]) == 2
    cfg2 = {"problem": BM_PROBLEM, "numerics": {"bogus_field": 1}, "task": {}}
    assert main(["check-hormander", "--config", _write(tmp_path / "c2.json", cfg2),
                 "--out", str(tmp_path)]) == 2


def _strip_timestamp(text: str) -> str:
    # wall-clock facts live in the metadata block only
    drop = ('"timestamp"', '"runtime_s"')
    return "\n".join(l for l in text.splitlines() if not any(k in l for k in drop))


def test_reproducible_outputs_modulo_timestamp(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "observable": {"g": "-1", "h": "0", "psi": "1"},
        "numerics": {"dt": 1e-3, "T": 0.5, "n_paths": 500, "seed": 23},
        "task": {"mode": "parabolic", "launch": {"points": [[0.0], [0.3]],
                                                 "times": [0.0, 0.2]}},
    }
    path = _write(tmp_path / "c.json", cfg)
    main(["solve", "--config", path, "--out", str(tmp_path / "o1")])
    main(["solve", "--config", path, "--out", str(tmp_path / "o2")])
    j1 = _strip_timestamp((tmp_path / "o1" / "solve.json").read_text())
    j2 = _strip_timestamp((tmp_path / "o2" / "solve.json").read_text())
    assert j1 == j2
    assert (tmp_path / "o1" / "solve.csv").read_bytes() == \
        (tmp_path / "o2" / "solve.csv").read_bytes()


def test_seed_override_echoed(tmp_path):
    cfg = {
        "problem": BM_PROBLEM,
        "numerics": {"dt": 1e-3, "T": 0.1, "n_paths": 50, "seed": 1},
        "task": {"mode": "survival", "launch": {"points": [[0.0]], "times": [0.0]}},
    }
    path = _write(tmp_path / "c.json", cfg)
    main(["solve", "--config", path, "--seed", "99", "--out", str(tmp_path / "o")])
    payload = _read_json(tmp_path / "o", "solve.json")
    assert payload["config"]["numerics"]["seed"] == 99
    assert payload["config"]["numerics"]["max_steps"] == 10_000_000  # default echoed
