"""Command-line harness: threshold tables, SINR-ratio sweeps, DNC solves and complexity plans."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import db_to_linear, generate_channel, sparse_mask, transmit
from .cluster import label_rrhs, nest_labelling, permute_to_dbbd
from .detect import Scenario, build_A_hat, compute_N1, sinr_ratio_sweep
from .netgen import AreaGeometry, count_from_density, generate_layout
from .planner import (PoolProfile, optimal_single_layer, optimal_two_layer, plan_sides, single_layer_curve,
                      two_layer_grid)
from .solver import detect_from_omega, solve_multi_layer, solve_single_layer
from .threshold import ThresholdQuery, expected_sparsity, sinr_ratio_lower_bound, solve_threshold

DEFAULTS = {"alpha": 3.7, "r0": 1.0, "snr_db": 80.0, "P": 1.0, "seed": 0, "workers": 1}

RADIUS_PRESET = {"r_km": [5, 10, 15, 20], "rho_star": [0.95], "beta_K": 10.0, "beta_N": 10.0}
TARGET_PRESET = {"r_km": [10], "rho_star": [0.90, 0.93, 0.96, 0.99], "beta_K": 10.0, "beta_N": 10.0}


class ConfigError(ValueError):
    pass


def fingerprint(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def checksum(v: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(v, dtype=complex).tobytes()).hexdigest()


def _one_of(cfg: dict, a: str, b: str, required: bool = True):
    has_a, has_b = cfg.get(a) is not None, cfg.get(b) is not None
    if has_a and has_b:
        raise ConfigError(f"give only one of {a} and {b}")
    if required and not (has_a or has_b):
        raise ConfigError(f"give one of {a} and {b}")
    return (a, cfg[a]) if has_a else ((b, cfg[b]) if has_b else (None, None))


def _listify(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _radii(cfg: dict) -> list[float]:
    key, val = _one_of(cfg, "r", "r_km")
    return [float(v) * (1e3 if key == "r_km" else 1.0) for v in _listify(val)]


def _counts(cfg: dict, geo: AreaGeometry) -> tuple[int, int]:
    kN, vN = _one_of(cfg, "N", "beta_N")
    kK, vK = _one_of(cfg, "K", "beta_K")
    N = int(vN) if kN == "N" else count_from_density(vN, geo)
    K = int(vK) if kK == "K" else count_from_density(vK, geo)
    return N, K


def _N0(cfg: dict) -> float:
    return float(cfg["P"]) / db_to_linear(cfg["snr_db"])


def write_csv(path: Path, cfg: dict, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config fingerprint: {fingerprint(cfg)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


# ---------------------------------------------------------------- commands

def threshold_rows(cfg: dict) -> list[tuple]:
    """(r, rho*, d0, predicted sparsity, measured sparsity) per radius and target."""
    kK, vK = _one_of(cfg, "K", "beta_K")
    rows = []
    for r in _radii(cfg):
        for rho in _listify(cfg["rho_star"]):
            q = ThresholdQuery(
                rho_star=float(rho), alpha=cfg["alpha"], r0=cfg["r0"], r=r,
                K=int(vK) if kK == "K" else None, beta_K=float(vK) if kK == "beta_K" else None,
                P=cfg["P"], N0=_N0(cfg), pdf_kind=cfg.get("pdf_kind", "approx"),
            )
            d0 = solve_threshold(q)
            predicted = expected_sparsity(d0, r)
            measured = ""
            if cfg.get("beta_N") is not None or cfg.get("N") is not None:
                geo = q.geometry
                N = int(cfg["N"]) if cfg.get("N") is not None else count_from_density(cfg["beta_N"], geo)
                layout = generate_layout(geo, N, q.n_users, cfg["seed"])
                measured = sparse_mask(layout, d0).nnz / (N * q.n_users)
            rows.append((r, float(rho), d0, predicted, measured))
    return rows


def cmd_threshold(cfg: dict, out: Path) -> dict:
    rows = threshold_rows(cfg)
    write_csv(out / "threshold.csv", cfg, ["r_m", "rho_star", "d0_m", "predicted_sparsity", "measured_sparsity"], rows)
    return {"rows": len(rows), "file": str(out / "threshold.csv")}


def _geometry(cfg: dict) -> AreaGeometry:
    return AreaGeometry.circle(_radii(cfg)[0], cfg["r0"])


def detect_rows(cfg: dict, records: list | None = None) -> list[tuple]:
    """(d0, trials, rho_hat, bound, s.e.) over a threshold grid; per-user SINRs go to ``records``."""
    geo = _geometry(cfg)
    N, K = _counts(cfg, geo)
    pdf = cfg.get("pdf_kind", "exact")
    scn = Scenario(geo, N, K, cfg["alpha"], cfg["snr_db"], cfg["P"], pdf)
    d0s = cfg.get("d0")
    if d0s is None:
        d0s = np.geomspace(10 * geo.r0, 2 * geo.radius, int(cfg.get("n_d0", 8)))
    d0s = [float(d) for d in _listify(d0s)]
    trials = int(cfg.get("trials", 200))
    res = sinr_ratio_sweep(scn, d0s, trials, cfg["seed"], cfg["workers"], keep_records=records is not None)
    if records is not None:
        for t, d0, full, hat in res.records:
            records.extend((t, d0, k, f, h) for k, (f, h) in enumerate(zip(full, hat)))
    q = ThresholdQuery(rho_star=0.0, alpha=cfg["alpha"], r0=geo.r0, r=geo.radius, K=K, P=cfg["P"],
                       N0=scn.N0, pdf_kind=pdf)
    return [(d0, trials, float(rh), sinr_ratio_lower_bound(d0, q), float(se))
            for d0, rh, se in zip(d0s, res.rho, res.se)]


def cmd_detect(cfg: dict, out: Path) -> dict:
    records = [] if cfg.get("records") else None
    rows = detect_rows(cfg, records)
    write_csv(out / "detect.csv", cfg, ["d0_m", "trials", "rho_hat", "bound", "se"], rows)
    if records is not None:
        write_csv(out / "detect_records.csv", cfg, ["trial", "d0_m", "user", "sinr_full", "sinr_hat"], records)
    return {"rows": len(rows), "file": str(out / "detect.csv")}


def _resolve_d0(cfg: dict, geo: AreaGeometry, K: int) -> float:
    key, val = _one_of(cfg, "d0", "rho_star")
    if key == "d0":
        return float(val)
    q = ThresholdQuery(rho_star=float(val), alpha=cfg["alpha"], r0=geo.r0, r=geo.radius, K=K,
                       P=cfg["P"], N0=_N0(cfg))
    return solve_threshold(q)


def _sides(cfg: dict, N: int, d0: float, geo: AreaGeometry) -> list[float]:
    layers = int(cfg.get("layers", 1))
    given = cfg.get("r_t")
    if given is not None:
        sides = [float(s) for s in _listify(given)]
    else:
        beta_N = N / geo.area * 1e6
        plan = (optimal_single_layer(cfg.get("s", 0.0)) if layers == 1
                else optimal_two_layer(cfg.get("s1", 0.0), cfg.get("s2", 0.0)))
        sides = list(plan_sides(plan, N, d0, beta_N).sides)
    if len(sides) != layers:
        raise ConfigError("r_t must list one side per layer")
    if any(s <= 2 * d0 for s in sides):
        raise ConfigError("infeasible plan: every side must exceed 2*d0")
    return sides


def run_solve(cfg: dict) -> dict:
    geo = _geometry(cfg)
    N, K = _counts(cfg, geo)
    d0 = _resolve_d0(cfg, geo, K)
    seeds = np.random.SeedSequence(cfg["seed"]).spawn(3)
    layout = generate_layout(geo, N, K, seeds[0])
    ch = generate_channel(layout, cfg["alpha"], d0, cfg["P"], _N0(cfg), seeds[1])
    sig = transmit(ch, int(seeds[2].generate_state(1)[0]))
    N1 = compute_N1(d0, cfg["alpha"], geo, ch.P, cfg.get("pdf_kind", "approx"))
    A = build_A_hat(ch, N1)
    sides = _sides(cfg, N, d0, geo)
    structure = label_rrhs(layout, sides[0], d0)
    for s in sides[1:]:
        structure = nest_labelling(structure, layout, s, d0)
    system = permute_to_dbbd(A, structure, sig.y)
    profile = PoolProfile(cfg.get("s1", cfg.get("s", 0.0)), cfg.get("s2", 0.0))
    if len(sides) == 1:
        omega, trace = solve_single_layer(system, cfg["workers"], cfg.get("mode", "parallel"), profile)
    else:
        omega, trace = solve_multi_layer(system, cfg["workers"], cfg.get("mode", "mode1"), profile)
    omega = system.unpermute(omega)
    x_hat = detect_from_omega(omega, ch)
    ref = cho_solve(cho_factor(A.toarray(), lower=True), sig.y)
    err = float(np.linalg.norm(omega - ref) / np.linalg.norm(ref))
    return {
        "N": N, "K": K, "d0": d0, "sides": sides,
        "omega_checksum": checksum(omega),
        "x_hat_checksum": checksum(x_hat),
        "oracle_relative_error": err,
        "layer_stats": [vars(structure.stats(t)) for t in range(1, structure.layer_count + 1)],
        "trace": json.loads(trace.to_json()),
    }


def cmd_solve(cfg: dict, out: Path) -> dict:
    result = run_solve(cfg)
    result["config_fingerprint"] = fingerprint(cfg)
    (out / "solve.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return {"file": str(out / "solve.json"), "oracle_relative_error": result["oracle_relative_error"]}


def cmd_plan(cfg: dict, out: Path) -> dict:
    if cfg.get("s1") is not None or cfg.get("s2") is not None:
        plan = optimal_two_layer(cfg.get("s1", 0.0), cfg.get("s2", 0.0))
    else:
        plan = optimal_single_layer(cfg.get("s", 0.0))
    if cfg.get("N") is not None and cfg.get("d0") is not None and cfg.get("beta_N") is not None:
        plan = plan_sides(plan, int(cfg["N"]), float(cfg["d0"]), float(cfg["beta_N"]))
        if any(s <= 2 * float(cfg["d0"]) for s in plan.sides):
            raise ConfigError("infeasible plan: every side must exceed 2*d0")
    doc = plan.to_dict()
    doc["config_fingerprint"] = fingerprint(cfg)
    (out / "plan.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    grid = cfg.get("s_grid", {"start": 0.0, "stop": 1.0, "num": 101})
    s_vals = np.linspace(grid["start"], grid["stop"], int(grid["num"]))
    write_csv(out / "order_single.csv", cfg, ["s", "order", "mode"], single_layer_curve(s_vals))
    g2 = cfg.get("s_pair_grid", {"start": 0.0, "stop": 2.0, "num": 21})
    pair_vals = np.linspace(g2["start"], g2["stop"], int(g2["num"]))
    write_csv(out / "order_two.csv", cfg, ["s1", "s2", "order", "mode", "flagged"],
              two_layer_grid(pair_vals, pair_vals))
    return {"file": str(out / "plan.json"), "mode": plan.mode, "order": str(plan.order)}


COMMANDS = {
    "threshold": (cmd_threshold, {}),
    "detect": (cmd_detect, {}),
    "solve": (cmd_solve, {}),
    "plan": (cmd_plan, {}),
    "repro-table1": (cmd_threshold, RADIUS_PRESET),
    "repro-table2": (cmd_threshold, TARGET_PRESET),
}


def build_config(command: str, path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    cfg.update(COMMANDS[command][1])
    if path:
        with open(path) as fh:
            user = json.load(fh)
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg.update(user)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dnc", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("config", nargs="?", help="JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--out-dir", default=".")
    args = parser.parse_args(argv)
    try:
        cfg = build_config(args.command, args.config, {"seed": args.seed, "workers": args.workers})
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command][0](cfg, out)
    except Exception as exc:  # every failure becomes a machine-readable record
        json.dump({"error": type(exc).__name__, "message": str(exc), "command": args.command}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
