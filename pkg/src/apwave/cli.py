"""``apwave <kind> --config <path>``: run one verification experiment.

Exit status: 0 success, 2 verdict failure, 1 invalid config or runtime error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from . import flux as fluxmod
from ._kernels import BACKEND
from .apfunc import Frequency, IrrationalBasis, TrigPolynomial, module_basis, n1_seminorm
from .asymptotics import (
    ProfileConfig,
    decay_series,
    exact_affine_wave,
    nonexpansiveness_check,
    profile_operator_T,
    run_schedule,
)
from .lifting import build_torus_problem, common_module, compare_direct_vs_lifted, ergodic_mean_check
from .solver import (
    GridState,
    SchemeConfig,
    Stepper,
    TorusGrid,
    cfl_dt,
    check_invariants,
    l1_distance,
    memory_cap_bytes,
    save_snapshot,
)

log = logging.getLogger("apwave")

KINDS = ("simulate", "decay", "travelwave", "contract", "lift-compare", "nondeg-check")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------


def _basis(doc: dict | None) -> IrrationalBasis:
    if not doc:
        return IrrationalBasis.rationals()
    return IrrationalBasis(tuple(doc["labels"]), tuple(float(v) for v in doc["values"]))


def _freq(coords, dim: int) -> Frequency:
    if dim == 1 and coords and not isinstance(coords[0], list):
        coords = [coords]
    return Frequency(tuple(tuple(Fraction(str(c)) for c in row) for row in coords))


def parse_initial(doc: dict) -> TrigPolynomial:
    if "json" in doc:
        return TrigPolynomial.from_json(doc["json"])
    basis = _basis(doc.get("basis"))
    dim = int(doc.get("dim", 1))
    terms = [(t["kind"], _freq(t["coords"], dim), float(t["amplitude"])) for t in doc.get("terms", [])]
    return TrigPolynomial.from_real_terms(basis, terms, float(doc.get("constant", 0.0)), dim)


def parse_flux(doc: dict) -> fluxmod.PiecewiseFlux:
    if "json" in doc:
        return fluxmod.PiecewiseFlux.from_json(doc["json"])
    if "components" in doc:
        return fluxmod.PiecewiseFlux.from_json(doc)
    lo, hi = doc.get("working_interval", [-2.0, 2.0])
    preset = doc.get("preset")
    if preset == "burgers":
        return fluxmod.burgers(lo, hi)
    if preset == "linear":
        return fluxmod.linear(float(doc.get("speed", 1.0)), lo, hi)
    if preset == "plateau":
        return fluxmod.plateau(float(doc.get("half_width", 0.5)), float(doc.get("slope", 1.0)), lo, hi)
    if preset == "cubic":
        return fluxmod.PiecewiseFlux.scalar([lo, hi], [[0.0, -1.0, 0.0, 1.0]])
    raise ValueError(f"unknown flux preset {preset!r}")


def parse_scheme(doc: dict | None) -> SchemeConfig:
    doc = doc or {}
    return SchemeConfig(doc.get("flux_rule", "godunov"), float(doc.get("cfl", 0.45)),
                        float(doc.get("dt_max", 0.5)), int(doc.get("chunk", 64)))


@dataclass
class RunConfig:
    kind: str
    raw: dict
    out: Path
    flux: Any = None
    initial: Any = None
    initial_b: Any = None
    scheme: SchemeConfig = field(default_factory=SchemeConfig)

    @property
    def hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(canon).hexdigest()


REQUIRED = {
    "simulate": ("flux", "initial", "grid", "time"),
    "decay": ("flux", "initial", "grid", "time"),
    "travelwave": ("flux", "initial", "grid", "time"),
    "contract": ("flux", "grid", "contract"),
    "lift-compare": ("flux", "initial", "grid", "time"),
    "nondeg-check": ("flux", "module"),
}


def load_config(kind: str, raw: dict, out: Path) -> RunConfig:
    problems = []
    if kind not in KINDS:
        problems.append(f"kind: must be one of {', '.join(KINDS)}")
    if raw.get("kind", kind) != kind:
        problems.append(f"kind: config declares {raw['kind']!r} but {kind!r} was requested")
    for sec in REQUIRED.get(kind, ()):
        if sec not in raw:
            problems.append(f"{sec}: required for kind {kind!r}")
    cfg = RunConfig(kind, raw, out)
    for key, parser in (("flux", parse_flux), ("initial", parse_initial), ("initial_b", parse_initial),
                        ("scheme", parse_scheme)):
        if key in raw:
            try:
                setattr(cfg, key, parser(raw[key]))
            except Exception as exc:  # noqa: BLE001 - every field problem is reported
                problems.append(f"{key}: {exc}")
    if cfg.scheme is not None:
        try:
            cfg.scheme.check(1)
        except ValueError as exc:
            problems.append(f"scheme: {exc}")
    for name, val in raw.get("tolerances", {}).items():
        if not isinstance(val, (int, float)) or not val > 0:
            problems.append(f"tolerances.{name}: must be a positive number")
    grid = raw.get("grid", {})
    cells = grid.get("cells")
    if "grid" in raw and (not isinstance(cells, int) or cells < 4):
        problems.append("grid.cells: integer >= 4 required")
    elif "grid" in raw:
        rank = int(grid.get("dim", 1))
        if cfg.initial is not None:
            rank = common_module(cfg.initial).rank
        need = 4 * 8 * cells**rank
        if need > memory_cap_bytes():
            problems.append(f"grid.cells: {cells}^{rank} cells need {need >> 20} MiB, "
                            f"above the APWAVE_MEM_CAP_MB cap")
    t = raw.get("time", {})
    if "time" in raw:
        sched = t.get("schedule")
        if not sched or any(not isinstance(x, (int, float)) or x < 0 for x in sched):
            problems.append("time.schedule: nonempty list of nonnegative times required")
        elif any(b <= a for a, b in zip(sched, sched[1:])):
            problems.append("time.schedule: must be strictly increasing")
    if problems:
        raise ConfigError(problems)
    return cfg


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _repro(cfg: RunConfig, grid=None) -> dict:
    return {"config_hash": cfg.hash, "grid": grid, "seed": cfg.raw.get("seed"), "backend": BACKEND}


def _write_json(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return f"{o.numerator}/{o.denominator}"
    raise TypeError(f"not serializable: {type(o)}")


def _tol(cfg: RunConfig, name: str, default: float) -> float:
    return float(cfg.raw.get("tolerances", {}).get(name, default))


def run_simulate(cfg: RunConfig) -> tuple[list[Path], dict]:
    prob = build_torus_problem(cfg.initial, cfg.flux, int(cfg.raw["grid"]["cells"]))
    frame = float(cfg.raw.get("frame_speed", 0.0))
    times = [float(t) for t in cfg.raw["time"]["schedule"]]
    states = run_schedule(prob, [t for t in times if t > 0], cfg.scheme, frame)
    if times[0] == 0.0:
        states = [prob.v0] + states
    arts = []
    fmt = cfg.raw.get("snapshot_format", "bin")
    for i, s in enumerate(states):
        arts.append(save_snapshot(s, cfg.out / f"snapshot_{i:03d}", fmt))
        arts.append(cfg.out / f"snapshot_{i:03d}.json")
    inv = check_invariants(prob.v0, states)
    verdict = {"invariants": inv}
    ok = inv["mean_ok"] and inv["range_ok"]
    ex = cfg.raw.get("exact_affine")
    if ex:
        # compare the last state with the exact translated wave (rank-1 lift only)
        x = prob.v0.grid.centers(0) / prob.map.rows[0, 0]
        u = exact_affine_wave(float(ex.get("I", 0.0)), float(ex["delta"]), float(ex["xi"]),
                              float(ex["tau"]), states[-1].time, x)
        err = float(np.mean(np.abs(states[-1].values - u)))
        verdict["exact_l1_error"] = err
        verdict["exact_ok"] = err <= _tol(cfg, "exact", 0.05)
        ok = ok and verdict["exact_ok"]
    diag = cfg.raw.get("diagnostics", {})
    if diag.get("ergodic_windows"):
        checks = [ergodic_mean_check(prob.v0, prob.map, float(w)) for w in diag["ergodic_windows"]]
        verdict["ergodic_gaps"] = [c.gap for c in checks]
        verdict["ergodic_envelopes"] = [c.envelope for c in checks]
        verdict["ergodic_ok"] = (max(c.gap for c in checks) <= _tol(cfg, "ergodic_gap", 2e-2)
                                 and all(b.envelope < a.envelope for a, b in zip(checks, checks[1:])))
        ok = ok and verdict["ergodic_ok"]
    if diag.get("seminorm"):
        a = float(n1_seminorm(cfg.initial, "lifted"))
        b = float(n1_seminorm(cfg.initial, "windowed"))
        verdict["seminorm"] = {"lifted": a, "windowed": b}
        verdict["seminorm_ok"] = abs(a - b) <= _tol(cfg, "seminorm_gap", 1e-2)
        ok = ok and verdict["seminorm_ok"]
    verdict["pass"] = bool(ok)
    summary = {"times": times, "verdict": verdict, "reproducibility": _repro(cfg, list(prob.v0.grid.shape))}
    arts.append(_write_json(cfg.out / "simulate.json", summary))
    return arts, verdict


def run_decay(cfg: RunConfig) -> tuple[list[Path], dict]:
    prob = build_torus_problem(cfg.initial, cfg.flux, int(cfg.raw["grid"]["cells"]))
    frame = cfg.raw.get("frame_speed")
    series = decay_series(prob, cfg.raw["time"]["schedule"], cfg.scheme,
                          None if frame is None else float(frame))
    csv_path = cfg.out / "decay.csv"
    csv_path.write_text(series.to_csv())
    verdict = {
        "monotone": series.max_increase() <= _tol(cfg, "monotone_slack", 1e-12),
        "max_increase": series.max_increase(),
        "final": series.values[-1],
        "initial": series.values[0],
        "invariants": series.invariants,
    }
    if "final_max" in cfg.raw.get("tolerances", {}):
        verdict["final_ok"] = series.values[-1] <= _tol(cfg, "final_max", 0)
    if "no_decay_abs" in cfg.raw.get("tolerances", {}):
        verdict["no_decay_ok"] = abs(series.values[-1] - series.values[0]) <= _tol(cfg, "no_decay_abs", 0)
    ok = all(v for k, v in verdict.items() if k.endswith("_ok") or k == "monotone")
    ok = ok and series.invariants["mean_ok"] and series.invariants["range_ok"]
    verdict["pass"] = ok
    doc = {"series": {"t": list(series.times), "value": list(series.values)}, "level": series.level,
           "frame_speed": series.frame_speed, "verdict": verdict,
           "reproducibility": _repro(cfg, list(prob.v0.grid.shape))}
    return [csv_path, _write_json(cfg.out / "decay.json", doc)], verdict


def run_travelwave(cfg: RunConfig) -> tuple[list[Path], dict]:
    sched = tuple(float(t) for t in cfg.raw["time"]["schedule"])
    pcfg = ProfileConfig(cells=int(cfg.raw["grid"]["cells"]), t_schedule=sched, scheme=cfg.scheme,
                         speed_pair_dt=float(cfg.raw["time"].get("speed_pair_dt", 0.05)))
    if cfg.initial_b is not None:
        return _run_pair(cfg, pcfg)
    rep = profile_operator_T(cfg.initial, cfg.flux, pcfg)
    doc = rep.to_json()
    doc["reproducibility"] = _repro(cfg, list(rep.profile.grid.shape))
    expected = cfg.raw.get("expected_speed")
    verdict = {"all_verdicts": rep.all_pass}
    if expected is not None:
        verdict["speed_ok"] = abs(rep.speed - float(expected)) <= _tol(cfg, "speed", 0.02)
    verdict["pass"] = all(verdict.values()) and rep.invariants["mean_ok"] and rep.invariants["range_ok"]
    doc["verdict"] = verdict
    arts = [_write_json(cfg.out / "wave_report.json", doc)]
    arts.append(save_snapshot(rep.profile, cfg.out / "profile", "csv"))
    arts.append(cfg.out / "profile.json")
    return arts, verdict


def _run_pair(cfg: RunConfig, pcfg: ProfileConfig) -> tuple[list[Path], dict]:
    res = nonexpansiveness_check(cfg.initial, cfg.initial_b, cfg.flux, pcfg,
                                 allowance=_tol(cfg, "allowance", 0.02))
    verdict = {"pass": res.holds and res.invariants["mean_ok"] and res.invariants["range_ok"],
               "invariants": res.invariants, "d_profiles": res.d_profiles, "d_initial": res.d_initial,
               "d_initial_grid": res.d_initial_grid, "slack": res.slack, "speeds": list(res.speeds)}
    doc = {"verdict": verdict, "reproducibility": _repro(cfg, [pcfg.cells])}
    return [_write_json(cfg.out / "nonexpansive.json", doc)], verdict


def run_contract(cfg: RunConfig) -> tuple[list[Path], dict]:
    c = cfg.raw["contract"]
    rng = np.random.default_rng(int(cfg.raw.get("seed", 0)))
    shape = (int(cfg.raw["grid"]["cells"]),) * int(cfg.raw["grid"].get("dim", 1))
    grid = TorusGrid(shape)
    f = cfg.flux
    if f.dim != grid.dim:
        f = fluxmod.lift_flux(f, np.asarray(c.get("rows", [[1.0]] * grid.dim), dtype=float))
    amp = float(c.get("amplitude", 1.0))
    rows = []
    worst = -math.inf
    st = Stepper(grid, f, cfg.scheme)
    for pair in range(int(c.get("pairs", 20))):
        a = GridState(grid, rng.uniform(-amp, amp, shape))
        b = GridState(grid, rng.uniform(-amp, amp, shape))
        dt = cfl_dt(a, f, cfg.scheme, (-amp, amp))
        alphas = st.alphas(-amp, amp)
        ua, ub = a.values, b.values
        d_prev = l1_distance(a, b)
        for k in range(int(c.get("steps", 500))):
            ua = st.step(ua, dt, alphas)
            ub = st.step(ub, dt, alphas)
            d = float(np.mean(np.abs(ua - ub)))
            worst = max(worst, d - d_prev)
            d_prev = d
        rows.append((pair, l1_distance(a, b), d_prev))
    path = cfg.out / "contract.csv"
    path.write_text("pair,d_initial,d_final\n" + "".join(f"{p},{x!r},{y!r}\n" for p, x, y in rows))
    verdict = {"max_step_increase": worst, "pass": worst <= _tol(cfg, "contraction", 1e-12)}
    _write_json(cfg.out / "contract.json", {"verdict": verdict, "reproducibility": _repro(cfg, list(shape))})
    return [path, cfg.out / "contract.json"], verdict


def run_lift_compare(cfg: RunConfig) -> tuple[list[Path], dict]:
    lc = cfg.raw.get("lift", {})
    conv = lc.get("convergent")
    rep = compare_direct_vs_lifted(
        cfg.initial, cfg.flux, float(cfg.raw["time"]["schedule"][-1]),
        torus_cells=int(cfg.raw["grid"]["cells"]), target_length=float(lc.get("length", 100.0)),
        convergent=tuple(conv) if conv else None, cfg=cfg.scheme,
    )
    doc = rep.to_json()
    verdict = {"pass": rep.l1_discrepancy <= _tol(cfg, "discrepancy", 0.05)}
    doc["verdict"] = verdict
    doc["reproducibility"] = _repro(cfg, doc["grid_resolutions"])
    return [_write_json(cfg.out / "discrepancy.json", doc)], verdict


def run_nondeg(cfg: RunConfig) -> tuple[list[Path], dict]:
    m = cfg.raw["module"]
    basis = _basis(m.get("basis"))
    dim = cfg.flux.dim
    gens = [_freq(g, dim) for g in m["generators"]]
    mod = module_basis(gens)
    I = float(cfg.raw.get("I", m.get("I", 0.0)))
    v = fluxmod.nondegeneracy_check(cfg.flux, mod, I)
    doc = v.to_json(basis)
    doc["module_basis"] = [[[str(c) for c in row] for row in b.coords] for b in mod.basis]
    doc["I"] = I
    doc["reproducibility"] = _repro(cfg)
    return [_write_json(cfg.out / "nondeg.json", doc)], {"pass": v.passed, **doc}


RUNNERS = {
    "simulate": run_simulate,
    "decay": run_decay,
    "travelwave": run_travelwave,
    "contract": run_contract,
    "lift-compare": run_lift_compare,
    "nondeg-check": run_nondeg,
}


def run_experiment(cfg: RunConfig, source: str | None = None) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    source = source or str(cfg.out / "config.json")
    t0 = time.perf_counter()
    status, verdict, arts, error = 0, None, [], None
    try:
        arts, verdict = RUNNERS[cfg.kind](cfg)
        status = 0 if verdict.get("pass", True) else 2
    except Exception as exc:  # noqa: BLE001 - recorded in the failure manifest
        log.exception("experiment failed")
        status, error = 1, f"{type(exc).__name__}: {exc}"
    manifest = {
        "kind": cfg.kind,
        "config": cfg.raw,
        "config_hash": cfg.hash,
        "code_version": __version__,
        "backend": BACKEND,
        "wall_time_s": time.perf_counter() - t0,
        "artifacts": sorted(p.name for p in arts),
        "status": {0: "ok", 1: "error", 2: "verdict-failure"}[status],
        "exit_code": status,
        "error": error,
        "rerun": f"apwave {cfg.kind} --config {source} --out {cfg.out}",
    }
    _write_json(cfg.out / "manifest.json", manifest)
    (cfg.out / "config.json").write_text(json.dumps(cfg.raw, indent=2, sort_keys=True) + "\n")
    return status


def preset_path(name: str) -> Path:
    return Path(str(resources.files("apwave") / "presets" / f"{name}.toml"))


def list_presets() -> list[str]:
    d = resources.files("apwave") / "presets"
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".toml"))


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="apwave", description=__doc__.splitlines()[0])
    ap.add_argument("kind", choices=KINDS + ("presets",))
    ap.add_argument("--config", help="TOML config path, or preset:<name>")
    ap.add_argument("--out", default=None, help="output directory (default: runs/<kind>)")
    ap.add_argument("--threads", type=int, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.kind == "presets":
        print("\n".join(list_presets()))
        return 0
    if not args.config:
        print("apwave: --config is required", file=sys.stderr)
        return 1
    if args.threads:
        try:
            import numba

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass
    path = preset_path(args.config[7:]) if args.config.startswith("preset:") else Path(args.config)
    try:
        text = path.read_text()
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (OSError, ValueError) as exc:
        print(f"apwave: cannot read config {path}: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out or raw.get("output_dir") or f"runs/{args.kind}")
    try:
        cfg = load_config(args.kind, raw, out)
    except ConfigError as exc:
        print(f"apwave: {exc}", file=sys.stderr)
        return 1
    status = run_experiment(cfg, args.config)
    if status != 1:
        print(json.dumps(json.loads((out / "manifest.json").read_text())["status"]))
    return status


if __name__ == "__main__":
    sys.exit(main())
