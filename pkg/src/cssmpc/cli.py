"""Command-line front end: ``cssmpc terminal|simulate|montecarlo|validate``.

Exit codes: 0 success (an infeasible trial is data, not failure), 1 a
synthesis, validation or missing-cache failure, 2 an unusable config or
bad arguments.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from cssmpc import conic, sim, smpc, terminal, vehicle
from cssmpc.polytope import Polytope, is_subset
from cssmpc.sysmodel import ChanceRow, ChanceSpec, ParameterHull, StageCost, SystemRealization

log = logging.getLogger("cssmpc")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

VARIANTS = ("robust", "nominal", "none")
VEHICLE_STATE_NAMES = ("delta", "e_psi", "e_y")


class ConfigError(ValueError):
    pass


class MissingCache(RuntimeError):
    pass


# -- serialization ----------------------------------------------------------------

def _json_float(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return "null"
    s = format(v, ".17g")
    if all(c not in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _json_float(float(obj))
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def matrix(entry) -> np.ndarray:
    shape = tuple(entry["shape"])
    data = np.asarray(entry["data"], dtype=float)
    if data.size != shape[0] * shape[1]:
        raise ConfigError(f"matrix data has {data.size} entries, shape {list(shape)} needs {shape[0] * shape[1]}")
    return data.reshape(shape)


# -- config -------------------------------------------------------------------------

def schema() -> dict:
    text = resources.files("cssmpc").joinpath("config_schema.json").read_text()
    return json.loads(text)


def schema_errors(cfg) -> list:
    v = Draft202012Validator(schema())
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
            for e in sorted(v.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))]


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    errs = schema_errors(cfg)
    if errs:
        raise ConfigError("config failed schema validation:\n  " + "\n  ".join(errs))
    return cfg


def _realization(d) -> SystemRealization:
    return SystemRealization(matrix(d["A"]), matrix(d["B"]), matrix(d["D"]), np.asarray(d["r"], dtype=float))


def _rows(block) -> list:
    A = matrix(block["A"])
    b = np.asarray(block["b"], dtype=float)
    if b.size != A.shape[0]:
        raise ConfigError(f"constraint offsets have length {b.size}, expected {A.shape[0]}")
    p = block["p"]
    ps = [float(p)] * A.shape[0] if not isinstance(p, list) else [float(v) for v in p]
    if len(ps) != A.shape[0]:
        raise ConfigError(f"got {len(ps)} probabilities for {A.shape[0]} rows")
    return [ChanceRow(A[i], b[i], ps[i]) for i in range(A.shape[0])]


def _vehicle_parts(cfg):
    sysc = cfg["system"]
    params = vehicle.VehicleParams(**sysc.get("params", {}))
    prof = sysc.get("profile", {"kind": "default"})
    kind = prof["kind"]
    if kind == "default":
        kw = {k: prof[k] for k in ("length", "nu_start", "nu_end", "rho_peak") if k in prof}
        kw.setdefault("length", cfg.get("steps", 60) + cfg.get("horizon", 4))
        profile = vehicle.default_profile(**kw)
    elif kind == "constant":
        profile = vehicle.constant_profile(prof["length"], prof["nu"], prof["rho"])
    else:
        profile = vehicle.ReferenceProfile(tuple(prof["nu"]), tuple(prof["rho"]))
    nu_b = tuple(sysc.get("nu_bounds", vehicle.NU_BOUNDS))
    rho_b = tuple(sysc.get("rho_bounds", vehicle.RHO_BOUNDS))
    return params, profile, nu_b, rho_b


def audit(cfg) -> list:
    """Dimension and consistency findings (empty when the config is coherent)."""
    out = []
    try:
        if cfg["system"]["type"] == "vehicle":
            n_x, n_u = 3, 1
            _, profile, nu_b, rho_b = _vehicle_parts(cfg)
            T = len(profile)
            if nu_b[0] > nu_b[1] or rho_b[0] > rho_b[1]:
                out.append("hull bounds must be ordered (low, high)")
            if nu_b[0] <= 0:
                out.append("speed bounds must be positive")
            if any(v <= 0 for v in profile.nu):
                out.append("profile speeds must be positive")
        else:
            verts = [_realization(v) for v in cfg["system"]["vertices"]]
            n_x, n_u = verts[0].n_x, verts[0].n_u
            for i, S in enumerate(verts):
                if (S.n_x, S.n_u, S.n_w) != (verts[0].n_x, verts[0].n_u, verts[0].n_w):
                    out.append(f"vertex {i} dimensions differ from vertex 0")
            for k, e in enumerate(cfg["system"]["schedule"]):
                if "weights" in e:
                    w = np.asarray(e["weights"], dtype=float)
                    if w.size != len(verts):
                        out.append(f"schedule step {k}: {w.size} weights for {len(verts)} vertices")
                    elif np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
                        out.append(f"schedule step {k}: weights must be nonnegative and sum to 1")
                else:
                    S = _realization(e)
                    if (S.n_x, S.n_u, S.n_w) != (n_x, n_u, verts[0].n_w):
                        out.append(f"schedule step {k}: dimensions differ from the vertices")
            T = len(cfg["system"]["schedule"])
            if "constraints" not in cfg:
                out.append("explicit systems need a constraints block")
            if "cost" not in cfg:
                out.append("explicit systems need a cost block")
            if "x0" not in cfg:
                out.append("explicit systems need x0")
        if "constraints" in cfg:
            for key, n in (("state", n_x), ("control", n_u)):
                try:
                    rows = _rows(cfg["constraints"][key])
                    if rows and rows[0].a.size != n:
                        out.append(f"{key} constraint rows have {rows[0].a.size} columns, expected {n}")
                except (ConfigError, ValueError) as exc:
                    out.append(f"{key} constraints: {exc}")
        if "cost" in cfg:
            Q, R = matrix(cfg["cost"]["Q"]), matrix(cfg["cost"]["R"])
            if Q.shape != (n_x, n_x):
                out.append(f"Q has shape {Q.shape}, expected {(n_x, n_x)}")
            if R.shape != (n_u, n_u):
                out.append(f"R has shape {R.shape}, expected {(n_u, n_u)}")
            if "x_goal" in cfg["cost"] and len(cfg["cost"]["x_goal"]) != n_x:
                out.append(f"x_goal has length {len(cfg['cost']['x_goal'])}, expected {n_x}")
        if "x0" in cfg and len(cfg["x0"]) != n_x:
            out.append(f"x0 has length {len(cfg['x0'])}, expected {n_x}")
        if cfg.get("horizon", 4) > T:
            out.append(f"horizon {cfg.get('horizon', 4)} exceeds the schedule length {T}")
    except (ConfigError, ValueError) as exc:
        out.append(str(exc))
    return out


def membership_findings(cfg) -> list:
    """Schedule steps whose realization is not in the parameter hull."""
    out = []
    if cfg["system"]["type"] == "vehicle":
        params, profile, nu_b, rho_b = _vehicle_parts(cfg)
        hull = vehicle.build_hull(params, nu_b, rho_b)
        for k in profile.within(nu_b, rho_b):
            out.append(f"schedule step {k}: (nu, rho) = ({profile.nu[k]:g}, {profile.rho[k]:g}) outside the bounds")
        schedule = [vehicle.linearize(params, nu, rho) for nu, rho in zip(profile.nu, profile.rho)]
    else:
        hull = ParameterHull(tuple(_realization(v) for v in cfg["system"]["vertices"]))
        schedule = [_schedule_entry(e, hull) for e in cfg["system"]["schedule"]]
    for k, S in enumerate(schedule):
        if hull.membership_weights(S) is None:
            out.append(f"schedule step {k}: realization is not in the parameter hull")
    return out


def _schedule_entry(e, hull: ParameterHull) -> SystemRealization:
    if "weights" in e:
        w = np.asarray(e["weights"], dtype=float)
        V = hull.vertices
        return SystemRealization(sum(wi * S.A for wi, S in zip(w, V)), sum(wi * S.B for wi, S in zip(w, V)),
                                 sum(wi * S.D for wi, S in zip(w, V)), sum(wi * S.r for wi, S in zip(w, V)))
    return _realization(e)


def build_scenario(cfg):
    findings = audit(cfg)
    if findings:
        raise ConfigError("config is inconsistent:\n  " + "\n  ".join(findings))
    N = int(cfg.get("horizon", 4))
    sysc = cfg["system"]
    if sysc["type"] == "vehicle":
        params, profile, nu_b, rho_b = _vehicle_parts(cfg)
        kw = {k: sysc[k] for k in ("p_x", "p_u", "R") if k in sysc}
        if "x0" in cfg:
            kw["x0"] = cfg["x0"]
        try:
            scn = vehicle.build_scenario(profile, params, horizon=N, nu_bounds=nu_b, rho_bounds=rho_b, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        over = {}
        if "constraints" in cfg:
            over.update(_constraint_overrides(cfg))
        if "cost" in cfg:
            over["cost"] = _cost(cfg, 3)
        return vehicle.with_overrides(scn, **over) if over else scn
    hull = ParameterHull(tuple(_realization(v) for v in sysc["vertices"]))
    schedule = tuple(_schedule_entry(e, hull) for e in sysc["schedule"])
    if "nominal" in sysc:
        nominal = _realization(sysc["nominal"])
    else:
        nominal = SystemRealization(*(np.mean([getattr(S, f) for S in schedule], axis=0) for f in "ABDr"))
    over = _constraint_overrides(cfg)
    return vehicle.Scenario(schedule, hull, over["X"], over["U"], over["chance"], _cost(cfg, hull.n_x), N,
                            np.asarray(cfg["x0"], dtype=float), name=cfg.get("name", "scenario"),
                            nominal_hull=ParameterHull((nominal,)))


def _constraint_overrides(cfg) -> dict:
    st, ct = _rows(cfg["constraints"]["state"]), _rows(cfg["constraints"]["control"])
    X = Polytope(np.array([r.a for r in st]), np.array([r.b for r in st]))
    U = Polytope(np.array([r.a for r in ct]), np.array([r.b for r in ct]))
    return {"X": X, "U": U, "chance": ChanceSpec(st, ct)}


def _cost(cfg, n_x: int) -> StageCost:
    c = cfg["cost"]
    return StageCost(matrix(c["Q"]), matrix(c["R"]), np.asarray(c.get("x_goal", np.zeros(n_x)), dtype=float))


def solver_settings(cfg) -> conic.SolveSettings:
    return conic.SolveSettings(**cfg.get("solver", {}))


def make_adapter(cfg):
    st = solver_settings(cfg)
    return conic.FallbackAdapter([conic.ClarabelAdapter(st), conic.CvxoptAdapter(st)])


def steps_of(cfg, scn) -> int:
    if "steps" in cfg:
        return int(cfg["steps"])
    if cfg["system"]["type"] == "vehicle":
        return 60
    return len(scn.schedule)


# -- terminal ingredient cache ----------------------------------------------------------

def _terminal_options(cfg) -> dict:
    t = cfg.get("terminal", {})
    return {"construction": t.get("construction", terminal.AUTO),
            "max_iter": int(t.get("max_iter", terminal.DEFAULT_MAX_ITER)),
            "eps": float(t.get("eps", terminal.DEFAULT_EPS))}


def _variant_hull(scn, variant: str) -> ParameterHull:
    if variant == "robust":
        return scn.hull
    if variant == "nominal":
        if scn.nominal_hull is None:
            raise ConfigError("scenario has no nominal system")
        return scn.nominal_hull
    raise ValueError(f"variant {variant!r} has no terminal ingredients")


def cache_path(cfg, scn, out_dir: Path, variant: str) -> Path:
    opts = _terminal_options(cfg)
    extra = {**opts, "variant": variant, "solver": cfg.get("solver", {})}
    key = terminal.content_hash(_variant_hull(scn, variant), scn.chance, extra)
    return out_dir / "cache" / f"terminal-{variant}-{key}.json"


def load_ingredients(cfg, scn, out_dir: Path, variant: str):
    if variant == "none":
        return None
    path = cache_path(cfg, scn, out_dir, variant)
    if not path.exists():
        raise MissingCache(f"no cached {variant} terminal ingredients at {path}; run `cssmpc terminal` first")
    return terminal.TerminalIngredients.from_dict(json.loads(path.read_text()))


def synthesize_cached(cfg, scn, out_dir: Path, variant: str):
    """Return ``(ingredients, cache_hit)``."""
    path = cache_path(cfg, scn, out_dir, variant)
    if path.exists():
        return terminal.TerminalIngredients.from_dict(json.loads(path.read_text())), True
    opts = _terminal_options(cfg)
    ing = terminal.synthesize(_variant_hull(scn, variant), scn.chance, max_iter=opts["max_iter"], eps=opts["eps"],
                              adapter=make_adapter(cfg), quantifier=opts["construction"])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(ing.to_dict()) + "\n")
    return ing, False


def ingredient_report(name: str, ing, scn, hull) -> list:
    eig = np.linalg.eigvalsh(ing.sigma_f)
    lines = [
        f"[{name}]",
        f"  sigma_f eigenvalues: {' '.join(format(v, '.6e') for v in eig)}",
        f"  terminal gain: {' '.join(format(v, '.6g') for v in np.ravel(ing.gain))}",
        f"  lyapunov margin (min over vertices): {terminal.lyapunov_margin(hull, ing.sigma_f, ing.gain):.3e}",
        f"  facets: x_safe {ing.x_safe.n_rows}, u_safe {ing.u_safe.n_rows}, x_f_mu {ing.x_f_mu.n_rows}",
        f"  construction: {ing.construction}; iterations: {ing.iteration_count}; converged: {ing.converged}",
        f"  invariance certificate: {'pass' if ing.certified else 'FAIL (not invariant under vertex switching)'}",
        f"  x_f_mu in x_safe: {is_subset(ing.x_f_mu, ing.x_safe, 1e-8)}; x_safe in X: {is_subset(ing.x_safe, scn.X, 1e-8)}",
    ]
    return lines


# -- plots --------------------------------------------------------------------------

def svg_panels(panels, title: str, width: int = 720, panel_h: int = 150) -> str:
    """Stacked line panels. ``panels`` is a list of (label, [(xs, ys, marker_at_end)])."""
    m_l, m_r, m_t, gap = 70, 20, 30, 30
    H = m_t + len(panels) * (panel_h + gap)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{title}</text>']
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    for p, (label, series) in enumerate(panels):
        y0 = m_t + p * (panel_h + gap)
        xs_all = np.concatenate([np.asarray(s[0], float) for s in series if len(s[0])] or [np.zeros(1)])
        ys_all = np.concatenate([np.asarray(s[1], float) for s in series if len(s[1])] or [np.zeros(1)])
        ys_all = ys_all[np.isfinite(ys_all)]
        xlo, xhi = float(xs_all.min()), float(max(xs_all.max(), xs_all.min() + 1))
        ylo, yhi = (float(ys_all.min()), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
        if yhi - ylo < 1e-12:
            ylo, yhi = ylo - 1.0, yhi + 1.0
        pw = width - m_l - m_r

        def X(v):
            return m_l + (v - xlo) / (xhi - xlo) * pw

        def Y(v):
            return y0 + panel_h - (v - ylo) / (yhi - ylo) * panel_h

        out.append(f'<rect x="{m_l}" y="{y0}" width="{pw}" height="{panel_h}" fill="none" stroke="#888"/>')
        out.append(f'<text x="{m_l - 8}" y="{y0 + 10}" text-anchor="end">{yhi:.3g}</text>')
        out.append(f'<text x="{m_l - 8}" y="{y0 + panel_h}" text-anchor="end">{ylo:.3g}</text>')
        out.append(f'<text x="12" y="{y0 + panel_h / 2}" transform="rotate(-90 12 {y0 + panel_h / 2})">{label}</text>')
        for i, (xs, ys, cross) in enumerate(series):
            pts = [(X(a), Y(b)) for a, b in zip(xs, ys) if np.isfinite(b)]
            if not pts:
                continue
            c = colors[i % len(colors)] if len(series) <= len(colors) else colors[0]
            out.append('<polyline fill="none" stroke="%s" stroke-width="1" stroke-opacity="0.7" points="%s"/>'
                       % (c, " ".join(f"{a:.1f},{b:.1f}" for a, b in pts)))
            if cross:
                a, b = pts[-1]
                out.append(f'<path d="M{a - 4:.1f},{b - 4:.1f}L{a + 4:.1f},{b + 4:.1f}M{a - 4:.1f},{b + 4:.1f}'
                           f'L{a + 4:.1f},{b - 4:.1f}" stroke="#000" stroke-width="1.5"/>')
        out.append(f'<text x="{m_l}" y="{y0 + panel_h + 14}">{xlo:g}</text>')
        out.append(f'<text x="{width - m_r}" y="{y0 + panel_h + 14}" text-anchor="end">k = {xhi:g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _state_names(cfg, n_x: int):
    if cfg["system"]["type"] == "vehicle":
        return VEHICLE_STATE_NAMES
    return tuple(f"x{i}" for i in range(n_x))


def trial_svg(cfg, rec: sim.TrialRecord) -> str:
    ks = [r.k for r in rec.rows]
    X = np.array([r.x for r in rec.rows])
    names = _state_names(cfg, X.shape[1])
    cross = rec.infeasible_at is not None
    panels = [(names[i], [(ks, X[:, i], cross)]) for i in reversed(range(X.shape[1]))]
    uk = [r.k for r in rec.rows if r.u is not None]
    U = np.array([r.u for r in rec.rows if r.u is not None]).reshape(len(uk), -1)
    for j in range(U.shape[1]):
        panels.append((f"u{j}", [(uk, U[:, j], False)]))
    return svg_panels(panels, f"{rec.variant} trial, seed {rec.seed}")


def montecarlo_svg(cfg, name: str, records) -> str:
    n_x = records[0].rows[0].x.size
    names = _state_names(cfg, n_x)
    panels = []
    for i in reversed(range(n_x)):
        series = [([r.k for r in rec.rows], [r.x[i] for r in rec.rows], rec.infeasible_at is not None)
                  for rec in records]
        panels.append((names[i], series))
    return svg_panels(panels, f"{name}: {len(records)} trials (crosses mark infeasibility)")


# -- commands -------------------------------------------------------------------------

def _out_dir(cfg, args) -> Path:
    d = args.out or cfg.get("output", {}).get("dir", "cssmpc-out")
    p = Path(d)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _plot_enabled(cfg, args) -> bool:
    return not args.no_plot and cfg.get("output", {}).get("plot", True)


def cmd_terminal(cfg, args) -> int:
    scn = build_scenario(cfg)
    out = _out_dir(cfg, args)
    variants = [args.variant] if args.variant else ["robust", "nominal"]
    lines, code = [], EXIT_OK
    for v in variants:
        if v == "none":
            lines.append("[none] no terminal ingredients needed")
            continue
        try:
            ing, hit = synthesize_cached(cfg, scn, out, v)
        except terminal.SynthesisError as exc:
            print(f"error: {v} synthesis failed: {type(exc).__name__}: {exc}", file=sys.stderr)
            lines.append(f"[{v}] FAILED: {type(exc).__name__}: {exc}")
            code = EXIT_FAILURE
            continue
        lines.extend(ingredient_report(v, ing, scn, _variant_hull(scn, v)))
        lines.append(f"  cache: {'hit' if hit else 'written'} {cache_path(cfg, scn, out, v)}")
    text = "\n".join(lines) + "\n"
    (out / "terminal-report.txt").write_text(text)
    print(text, end="")
    return code


def _controller(cfg, scn, ing, variant: str) -> sim.Controller:
    ctl = cfg.get("controller", {})
    return sim.Controller(scn, ing, ctl.get("init_mode", smpc.STATIC), ctl.get("gain_mode", smpc.LOWER),
                          adapter=make_adapter(cfg), name=variant)


def cmd_simulate(cfg, args) -> int:
    scn = build_scenario(cfg)
    out = _out_dir(cfg, args)
    variant = args.variant or "robust"
    try:
        ing = load_ingredients(cfg, scn, out, variant)
    except MissingCache as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    ctl = _controller(cfg, scn, ing, variant)
    rec = sim.run_trial(scn, ing, ctl.init_mode, seed, gain_mode=ctl.gain_mode, steps=steps_of(cfg, scn),
                        controller=ctl, variant=variant)
    stem = f"trial-{variant}-seed{seed}"
    (out / f"{stem}.csv").write_text(rec.to_csv())
    if _plot_enabled(cfg, args):
        (out / f"{stem}.svg").write_text(trial_svg(cfg, rec))
    status = "completed" if rec.infeasible_at is None else f"{rec.failure} at step {rec.infeasible_at}"
    print(f"{variant} seed {seed}: {rec.n_steps} steps, {status}, cost {rec.total_cost:.6g}")
    return EXIT_OK


def cmd_montecarlo(cfg, args) -> int:
    scn = build_scenario(cfg)
    out = _out_dir(cfg, args)
    mc = cfg.get("montecarlo", {})
    variants = [args.variant] if args.variant else list(mc.get("variants", VARIANTS))
    n_trials = args.trials if args.trials is not None else int(mc.get("trials", 20))
    base_seed = args.seed if args.seed is not None else int(mc.get("base_seed", 0))
    try:
        ings = {v: load_ingredients(cfg, scn, out, v) for v in variants}
    except MissingCache as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    ctl = cfg.get("controller", {})
    init_mode = ctl.get("init_mode", smpc.STATIC)
    gain_mode = ctl.get("gain_mode", smpc.LOWER)
    results = sim.run_monte_carlo(scn, ings, n_trials, base_seed, init_mode=init_mode, gain_mode=gain_mode,
                                  steps=steps_of(cfg, scn), workers=int(mc.get("workers", 1)))
    mc_dir = out / "montecarlo"
    for name, summ in results.items():
        vdir = mc_dir / name
        vdir.mkdir(parents=True, exist_ok=True)
        for rec in summ.records:
            (vdir / f"seed-{rec.seed}.csv").write_text(rec.to_csv())
        if _plot_enabled(cfg, args):
            (mc_dir / f"{name}.svg").write_text(montecarlo_svg(cfg, name, summ.records))
    summary = {
        "scenario": cfg.get("name", scn.name),
        "n_trials": n_trials, "base_seed": base_seed, "rng": "numpy Philox, one stream per seed",
        "init_mode": init_mode, "gain_mode": gain_mode,
        "table": {name: s.infeasibility_count for name, s in results.items()},
        "variants": {name: _summary_dict(s) for name, s in results.items()},
    }
    (mc_dir / "summary.json").write_text(dumps(summary) + "\n")
    runtime = {name: {"wall_seconds": s.wall_time, "solve_seconds": s.solve_time, "solves": s.n_solves}
               for name, s in results.items()}
    (mc_dir / "runtime.json").write_text(dumps(runtime) + "\n")
    print("infeasible trials: " + ", ".join(f"{k} {v}/{n_trials}" for k, v in summary["table"].items()))
    return EXIT_OK


def _summary_dict(s: sim.MonteCarloSummary) -> dict:
    d = s.to_dict()
    d.pop("runtime")
    return d


def cmd_validate(cfg_path, args) -> int:
    try:
        cfg = json.loads(Path(cfg_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config {cfg_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    findings = [f"schema: {e}" for e in schema_errors(cfg)]
    if not findings:
        findings += [f"dimensions: {e}" for e in audit(cfg)]
    if not findings:
        findings += [f"hull membership: {e}" for e in membership_findings(cfg)]
    if findings:
        print("config has problems:")
        for f in findings:
            print(f"  {f}")
        return EXIT_FAILURE
    print("config ok: schema, dimensions and hull membership checks passed")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cssmpc", description="Covariance-steering stochastic MPC toolkit")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {"terminal": "synthesize and cache terminal ingredients",
             "simulate": "run one closed-loop trial",
             "montecarlo": "run a Monte Carlo study over variants",
             "validate": "check a config without solving anything"}
    for name, h in helps.items():
        p = sub.add_parser(name, help=h)
        p.add_argument("--config", required=True, help="scenario config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="trial seed (montecarlo: base seed)")
        p.add_argument("--variant", choices=VARIANTS, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--no-plot", action="store_true", help="skip SVG output")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        return cmd_validate(args.config, args)
    try:
        cfg = load_config(args.config)
        handler = {"terminal": cmd_terminal, "simulate": cmd_simulate, "montecarlo": cmd_montecarlo}[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
