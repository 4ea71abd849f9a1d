"""Command line: scenario files in, field / plan / recovery artifacts out.

    streamrecover solve-field --scenario s.yaml --out DIR
    streamrecover plan        --scenario s.yaml --speed 2.0 --out DIR
    streamrecover recover     --scenario s.yaml [--strategy bisect|incremental] --out DIR

Exit codes: 0 success, 2 bad input, 3 numerical failure, 4 infeasible scenario.
Artifacts are written to a scratch directory and moved into place only once
everything succeeded, so a failing run leaves ``--out`` untouched.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass

import contourpy
import jsonschema
import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from .errors import (
    InfeasibleError,
    InputError,
    NumericalError,
    QuadFailure,
    RecoveryError,
    ScenarioError,
)
from .fdm import GridSpec, StreamFieldGrid, write_field
from .flc import OuterGains
from .flowfield import ObstacleSpec, PlanarPoint
from .orchestrator import (
    HealthyQuad,
    RecoveryScenario,
    check_clearance,
    flight_steps,
    max_safe_speed,
    plan_recovery,
    solve_scenario_field,
)
from .quadrotor import ExtendedState, QuadParams

log = logging.getLogger(__name__)

THREADS_ENV = "STREAMRECOVER_THREADS"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4

# -- scenario file -----------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = _obj({
    "output_dir": {"type": "string"},
    "seed": {"type": "integer"},
    "domain": _obj({
        "x_min_m": _num, "x_max_m": _num, "y_min_m": _num, "y_max_m": _num,
        "spacing_m": _pos,
    }, required=("x_min_m", "x_max_m", "y_min_m", "y_max_m", "spacing_m")),
    "boundary_gain_per_s": _pos,
    "obstacles": {"type": "array", "items": _obj({
        "center_m": _vec2,
        "radius_m": _pos,
        "psi_m2_per_s": _num,
    }, required=("center_m", "radius_m"))},
    "healthy": {"type": "array", "items": _obj({
        "id": {"type": "string", "minLength": 1},
        "position_m": _vec3,
        "velocity_m_per_s": _vec3,
        "euler_rad": _vec3,
        "body_rate_rad_per_s": _vec3,
        "thrust_n": _pos,
        "thrust_rate_n_per_s": _num,
    }, required=("id", "position_m"))},
    "quad": _obj({
        "mass_kg": _pos,
        "gravity_m_per_s2": _pos,
        "arm_length_m": _pos,
        "inertia_xx_kg_m2": _pos,
        "inertia_yy_kg_m2": _pos,
        "inertia_zz_kg_m2": _pos,
        "thrust_coeff_n_s2_per_rad2": _pos,
        "drag_coeff_n_m_s2_per_rad2": _pos,
        "omega_max_rad_per_s": _pos,
    }),
    "gains": _obj({f"k{i}": _pos for i in range(1, 7)}),
    "simulation": _obj({
        "dt_s": _pos,
        "horizon_s": _pos,
        "segment_duration_s": _pos,
        "segment_length_m": _pos,
        "snap_feedforward": {"type": "boolean"},
    }),
    "search": _obj({
        "v_min_m_per_s": _pos,
        "v_max_m_per_s": _pos,
        "v_tolerance_m_per_s": _pos,
        "max_iterations": {"type": "integer", "minimum": 2},
        "strategy": {"enum": ["bisect", "incremental"]},
    }),
    "contours": _obj({"count": {"type": "integer", "minimum": 1}}),
}, required=("domain", "obstacles", "healthy"))

# file key -> QuadParams field
_QUAD_KEYS = {
    "mass_kg": "m", "gravity_m_per_s2": "g", "arm_length_m": "l",
    "inertia_xx_kg_m2": "Ix", "inertia_yy_kg_m2": "Iy", "inertia_zz_kg_m2": "Iz",
    "thrust_coeff_n_s2_per_rad2": "b", "drag_coeff_n_m_s2_per_rad2": "k",
    "omega_max_rad_per_s": "omega_max",
}


@dataclass(frozen=True, eq=False)
class ScenarioFile:
    scenario: RecoveryScenario
    output_dir: str = "out"
    seed: int = 0  # reserved; the pipeline is deterministic
    strategy: str = "bisect"
    contour_count: int = 30


def _key_path(path) -> str:
    out = ""
    for part in path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _section(doc, key):
    return doc.get(key, {})


def parse_scenario(doc) -> ScenarioFile:
    """Validate a decoded scenario document and build the scenario."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(f"scenario key {_key_path(e.absolute_path)}: {e.message}")

    def build(key, fn):
        # Constructors raise ValueError on cross-field problems; name the key.
        try:
            return fn()
        except InputError:
            raise
        except ValueError as exc:
            raise ScenarioError(f"scenario key {key}: {exc}") from exc

    d = doc["domain"]
    grid = build("domain", lambda: GridSpec.from_spacing(
        d["x_min_m"], d["x_max_m"], d["y_min_m"], d["y_max_m"], d["spacing_m"]))
    params = build("quad", lambda: QuadParams(
        **{_QUAD_KEYS[k]: float(v) for k, v in _section(doc, "quad").items()}))
    gains = build("gains", lambda: OuterGains(
        **{k: float(v) for k, v in _section(doc, "gains").items()}))

    obstacles = []
    for i, ob in enumerate(doc["obstacles"]):
        psi = ob.get("psi_m2_per_s")
        obstacles.append(build(f"obstacles[{i}]", lambda: ObstacleSpec(
            PlanarPoint(*map(float, ob["center_m"])), float(ob["radius_m"]),
            None if psi is None else float(psi))))

    healthy = []
    for i, q in enumerate(doc["healthy"]):
        st = ExtendedState.hover(q["position_m"], params)
        if "velocity_m_per_s" in q:
            st.v = np.asarray(q["velocity_m_per_s"], dtype=float)
        if "euler_rad" in q:
            st.euler = np.asarray(q["euler_rad"], dtype=float)
        if "body_rate_rad_per_s" in q:
            st.omega = np.asarray(q["body_rate_rad_per_s"], dtype=float)
        st.p = float(q.get("thrust_n", st.p))
        st.p_dot = float(q.get("thrust_rate_n_per_s", 0.0))
        healthy.append(HealthyQuad(q["id"], st.as_array()))

    sim = _section(doc, "simulation")
    search = _section(doc, "search")
    defaults = RecoveryScenario.__dataclass_fields__
    v_bounds = (float(search.get("v_min_m_per_s", defaults["v_bounds"].default[0])),
                float(search.get("v_max_m_per_s", defaults["v_bounds"].default[1])))

    def opt(section, key, field_):
        return type(defaults[field_].default)(section.get(key, defaults[field_].default))

    scenario = build("search", lambda: RecoveryScenario(
        grid=grid,
        K=float(doc.get("boundary_gain_per_s", 1.0)),
        obstacles=obstacles,
        healthy=healthy,
        params=params,
        gains=gains,
        sim_dt=opt(sim, "dt_s", "sim_dt"),
        horizon=opt(sim, "horizon_s", "horizon"),
        v_bounds=v_bounds,
        v_tolerance=opt(search, "v_tolerance_m_per_s", "v_tolerance"),
        max_iterations=opt(search, "max_iterations", "max_iterations"),
        segment_duration=opt(sim, "segment_duration_s", "segment_duration"),
        segment_length=opt(sim, "segment_length_m", "segment_length"),
        feedforward=opt(sim, "snap_feedforward", "feedforward"),
    ))
    return ScenarioFile(scenario, doc.get("output_dir", "out"), int(doc.get("seed", 0)),
                        search.get("strategy", "bisect"),
                        int(_section(doc, "contours").get("count", 30)))


def load_scenario(path) -> ScenarioFile:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ScenarioError(f"scenario file is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario file must hold a mapping at top level")
    return parse_scenario(doc)


def scenario_to_dict(sf: ScenarioFile) -> dict:
    """Full document (every key explicit) that parses back to the same scenario."""
    sc = sf.scenario
    g = sc.grid
    if not math.isclose(g.dx, g.dy, rel_tol=1e-12):
        raise ValueError("only square grid cells can be written as spacing_m")
    p = sc.params
    obstacles = []
    for ob in sc.obstacles:
        entry = {"center_m": [ob.center.x, ob.center.y], "radius_m": ob.radius}
        if ob.psi is not None:
            entry["psi_m2_per_s"] = ob.psi
        obstacles.append(entry)
    healthy = []
    for q in sc.healthy:
        st = ExtendedState.from_array(q.state)
        healthy.append({
            "id": q.quad_id,
            "position_m": st.r.tolist(),
            "velocity_m_per_s": st.v.tolist(),
            "euler_rad": st.euler.tolist(),
            "body_rate_rad_per_s": st.omega.tolist(),
            "thrust_n": st.p,
            "thrust_rate_n_per_s": st.p_dot,
        })
    return {
        "output_dir": sf.output_dir,
        "seed": sf.seed,
        "domain": {"x_min_m": g.x_min, "x_max_m": g.x_max, "y_min_m": g.y_min,
                   "y_max_m": g.y_max, "spacing_m": g.dx},
        "boundary_gain_per_s": sc.K,
        "obstacles": obstacles,
        "healthy": healthy,
        "quad": {k: getattr(p, f) for k, f in _QUAD_KEYS.items()},
        "gains": {f"k{i}": getattr(sc.gains, f"k{i}") for i in range(1, 7)},
        "simulation": {"dt_s": sc.sim_dt, "horizon_s": sc.horizon,
                       "segment_duration_s": sc.segment_duration,
                       "segment_length_m": sc.segment_length,
                       "snap_feedforward": sc.feedforward},
        "search": {"v_min_m_per_s": sc.v_bounds[0], "v_max_m_per_s": sc.v_bounds[1],
                   "v_tolerance_m_per_s": sc.v_tolerance,
                   "max_iterations": sc.max_iterations, "strategy": sf.strategy},
        "contours": {"count": sf.contour_count},
    }


def dump_scenario(sf: ScenarioFile, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(scenario_to_dict(sf), fh, sort_keys=False)


# -- artifacts ---------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def contour_lines(field_: StreamFieldGrid, count: int):
    """``count`` evenly spaced interior levels of psi as ``[(level, (n, 2) xy), ...]``."""
    g = field_.grid
    lo, hi = float(np.min(field_.psi)), float(np.max(field_.psi))
    gen = contourpy.contour_generator(g.xs, g.ys, field_.psi,
                                      line_type=contourpy.LineType.Separate)
    out = []
    for level in np.linspace(lo, hi, count + 2)[1:-1]:
        for line in gen.lines(level):
            out.append((float(level), line))
    return out


def write_contours(lines, path) -> None:
    """Rows ``level, x, y``; a ``level, nan, nan`` row ends each polyline."""
    rows = []
    for level, xy in lines:
        rows.extend((level, x, y) for x, y in xy)
        rows.append((level, math.nan, math.nan))
    _write_csv(path, ["level", "x", "y"], rows)


PLAN_HEADER = ["t", "x_d", "y_d", "z_d", "vx_d", "vy_d", "vz_d",
               "ax_d", "ay_d", "az_d", "jx_d", "jy_d", "jz_d"]

TRAJECTORY_HEADER = ["t", "x", "y", "z", "x_d", "y_d", "z_d", "roll", "pitch", "yaw",
                     "omega_1", "omega_2", "omega_3", "omega_4"]


def plan_rows(scenario: RecoveryScenario, ref):
    ts = scenario.sim_dt * np.arange(flight_steps(scenario, ref) + 1)
    d = ref.derivatives_many(ts)[:, :4].reshape(len(ts), 12)
    return np.column_stack([ts, d])


def trajectory_rows(qlog):
    return np.column_stack([qlog.t, qlog.states[:, 0:3], qlog.ref[:, 0], qlog.states[:, 6:9],
                            qlog.rotor])


def _safe_name(quad_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in quad_id)


def publish(out_dir, writers) -> None:
    """Run ``writers`` (``{filename: fn(path)}``) in a scratch dir, then move the files in."""
    out_dir = os.path.abspath(out_dir)
    parent = os.path.dirname(out_dir)
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(prefix=".streamrecover-", dir=parent)
    try:
        for name, fn in writers.items():
            fn(os.path.join(tmp, name))
        os.makedirs(out_dir, exist_ok=True)
        for name in writers:
            os.replace(os.path.join(tmp, name), os.path.join(out_dir, name))
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


# -- commands ----------------------------------------------------------------

def cmd_solve_field(sf: ScenarioFile, out_dir) -> None:
    field_ = solve_scenario_field(sf.scenario)
    lines = contour_lines(field_, sf.contour_count)
    publish(out_dir, {
        "field.txt": lambda p: write_field(field_, p),
        "contours.csv": lambda p: write_contours(lines, p),
    })


def cmd_plan(sf: ScenarioFile, speed: float, out_dir) -> None:
    sc = sf.scenario
    plans = plan_recovery(sc, speed)
    writers = {}
    for quad, (_, ref) in zip(sc.healthy, plans):
        rows = plan_rows(sc, ref)
        writers[f"plan_{_safe_name(quad.quad_id)}.csv"] = (
            lambda p, rows=rows: _write_csv(p, PLAN_HEADER, rows))
    publish(out_dir, writers)


def cmd_recover(sf: ScenarioFile, strategy: str, out_dir) -> dict:
    sc = sf.scenario
    result = max_safe_speed(sc, strategy)
    sim = result.log
    clearance = check_clearance(sim, sc.obstacles)
    summary = {
        "v_star": result.v_star,
        "max_rotor_speed": sim.max_rotor_speed(),
        # JSON has no infinity; null means "no obstacles".
        "min_clearance": clearance if math.isfinite(clearance) else None,
        "max_tracking_error": sim.max_tracking_error(),
        "iterations": result.iterations,
    }
    writers = {}
    for q in sim.quads:
        rows = trajectory_rows(q)
        writers[f"trajectory_{_safe_name(q.quad_id)}.csv"] = (
            lambda p, rows=rows: _write_csv(p, TRAJECTORY_HEADER, rows))

    def write_summary(p):
        with open(p, "w") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")

    writers["summary.json"] = write_summary
    publish(out_dir, writers)
    return summary


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, QuadFailure):
        exc = exc.cause
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (InputError, ValueError, OSError)):
        return EXIT_INPUT
    return EXIT_NUMERICAL


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ScenarioError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="streamrecover", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="YAML scenario file")
        p.add_argument("--out", help="output directory (default: the file's output_dir)")

    common(sub.add_parser("solve-field", help="solve the stream field, write field and contours"))
    p = sub.add_parser("plan", help="write per-quad references at one sliding speed")
    common(p)
    p.add_argument("--speed", type=float, required=True, help="sliding speed, m/s")
    p = sub.add_parser("recover", help="search the fastest safe speed, write trajectories")
    common(p)
    p.add_argument("--strategy", choices=["bisect", "incremental"],
                   help="speed search (default: the file's search.strategy)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _thread_limit()
        sf = load_scenario(args.scenario)
        out = args.out or sf.output_dir
        with threadpool_limits(limits=threads):
            if args.command == "solve-field":
                cmd_solve_field(sf, out)
            elif args.command == "plan":
                if not args.speed > 0:
                    raise ScenarioError(f"--speed must be positive, got {args.speed}")
                cmd_plan(sf, args.speed, out)
            else:
                summary = cmd_recover(sf, args.strategy or sf.strategy, out)
                print(json.dumps(summary))
    except (RecoveryError, ValueError, ArithmeticError, OSError) as exc:
        print(f"streamrecover: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
