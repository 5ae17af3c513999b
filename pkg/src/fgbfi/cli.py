"""Command-line front end.

Five subcommands cover the full pipeline: ``integrate`` (dense trajectory
export), ``verify`` (backward-forward round trip), ``returns`` (recurrence
scan), ``rk4-compare`` (fixed-step RK4 error study) and ``lyapunov``
(spectrum estimates).  Every run emits a manifest fingerprint -- a hash of
all inputs -- in the output header; identical fingerprints give
byte-identical data files.

Exit codes: 0 success/pass, 2 verification failed, 3 bounding-ball escape,
4 configuration error, 5 parse error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

from gmpy2 import mpfr

from .analysis import distance_series, find_returns, rk4_error
from .lyapunov import (
    LinearDependenceError,
    PerturbationGroup,
    benettin,
    builtin_groups,
    divergence_average,
)
from .numerics import ConfigurationError, PrecisionConfig, format_mpfr
from .systems import (
    DefinitionError,
    MODEL_BUILDERS,
    load_system,
)
from .taylor import AccuracyError
from .trajectory import (
    BallEscapeError,
    BoundingBall,
    construct_trajectory,
    dense_sample,
    estimate_ball,
    verify_round_trip,
)

__all__ = ["main"]

EXIT_OK = 0
EXIT_VERIFY_FAILED = 2
EXIT_BALL_ESCAPE = 3
EXIT_CONFIG = 4
EXIT_PARSE = 5

ENV_PREFIX = "FGBFI_"


class UsageError(Exception):
    """Bad command line or definition input (exit code 5)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_default(name, fallback):
    return os.environ.get(ENV_PREFIX + name, fallback)


def _add_common(p, time_default=None):
    src = p.add_argument_group("system")
    src.add_argument("--model", help="catalog model name (tumor, lorenz)")
    src.add_argument("--system", metavar="FILE",
                     help="JSON system definition file (overrides --model)")
    src.add_argument("-p", "--params", default="",
                     help="model parameters, e.g. N=5,H=3,I=0.7 "
                          "(decimal strings; fractions like 8/3 allowed)")
    src.add_argument("--x0", required=True,
                     help="initial point, comma-separated decimals (state units)")
    if time_default is None:
        src.add_argument("-T", "--time", required=True,
                         help="length of the integration time segment "
                              "(time units)")
    else:
        src.add_argument("-T", "--time", default=time_default,
                         help="length of the integration time segment "
                              f"(time units, default {time_default})")

    prec = p.add_argument_group("precision")
    prec.add_argument("--bits", type=int,
                      default=int(_env_default("BITS", "160")),
                      help="mantissa bits of every big float (default 160)")
    prec.add_argument("--eps-series", default=_env_default("EPS_SERIES", "1e-40"),
                      help="series truncation tolerance (default 1e-40)")
    prec.add_argument("--eps-roundtrip",
                      default=_env_default("EPS_ROUNDTRIP", "1e-10"),
                      help="round-trip tolerance, state units (default 1e-10)")
    prec.add_argument("--delta", default=_env_default("DELTA", "1"),
                      help="step-size margin, units 1/time (default 1)")
    prec.add_argument("--degree-cap", type=int,
                      default=int(_env_default("DEGREE_CAP", "200")),
                      help="maximum series degree per step (default 200)")

    ball = p.add_argument_group("bounding ball")
    ball.add_argument("--ball-center",
                      help="comma-separated center (default: estimated from a "
                           "coarse forward probe)")
    ball.add_argument("--ball-radius",
                      help="ball radius, state units (default: estimated, x2)")

    out = p.add_argument_group("output")
    out.add_argument("--out", metavar="FILE",
                     help="write the report here (default stdout); a "
                          ".manifest.json sidecar is written next to it")
    out.add_argument("--digits", type=int, default=10,
                     help="fractional decimal digits for state output "
                          "(default 10)")


def _split_csv(text, what):
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise UsageError(f"{what} must be a non-empty comma-separated list")
    return items


def _parse_params(text):
    params = {}
    if not text:
        return params
    for item in _split_csv(text, "--params"):
        if "=" not in item:
            raise UsageError(f"bad parameter {item!r}, expected name=value")
        k, _, v = item.partition("=")
        params[k.strip()] = v.strip()
    return params


def _build_config(args):
    return PrecisionConfig(
        bits=args.bits,
        eps_series=args.eps_series,
        eps_roundtrip=args.eps_roundtrip,
        delta=args.delta,
        degree_cap=args.degree_cap,
    )


def _build_system(args, config):
    if args.system:
        try:
            with open(args.system, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {args.system}: {exc}") from exc
        system = load_system(text, config)
        source = {
            "file": args.system,
            "sha256": hashlib.sha256(text.encode()).hexdigest(),
        }
        return system, source
    if not args.model:
        raise UsageError("one of --model or --system is required")
    builder = MODEL_BUILDERS.get(args.model)
    if builder is None:
        raise UsageError(
            f"unknown model {args.model!r}; available: "
            + ", ".join(sorted(MODEL_BUILDERS))
        )
    params = _parse_params(args.params)
    system = builder(params, config)
    return system, {"model": args.model, "params": params}


def _build_ball(args, system, x0, total_time, config, direction="forward"):
    if (args.ball_center is None) != (args.ball_radius is None):
        raise UsageError("--ball-center and --ball-radius go together")
    if args.ball_center is not None:
        center = _split_csv(args.ball_center, "--ball-center")
        if len(center) != system.n:
            raise UsageError(
                f"--ball-center needs {system.n} components, got {len(center)}"
            )
        with config.context():
            ball = BoundingBall(
                center=tuple(mpfr(c) for c in center),
                radius=mpfr(args.ball_radius),
            )
            if not ball.radius > 0:
                raise UsageError("--ball-radius must be positive")
        desc = {"center": center, "radius": args.ball_radius}
        return ball, desc
    ball = estimate_ball(system, x0, total_time, config, direction=direction)
    desc = {
        "estimated": True,
        "center": [format_mpfr(c, 6, "e") for c in ball.center],
        "radius": format_mpfr(ball.radius, 6, "e"),
    }
    return ball, desc


def _fingerprint(manifest_inputs) -> str:
    blob = json.dumps(manifest_inputs, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _emit(args, header_lines, rows, manifest_inputs, extra_manifest=None):
    fingerprint = _fingerprint(manifest_inputs)
    lines = [f"# fingerprint: {fingerprint}"]
    lines.extend(header_lines)
    lines.extend(rows)
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        manifest = {
            "fingerprint": fingerprint,
            "inputs": manifest_inputs,
            "artifacts": [args.out],
        }
        if extra_manifest:
            manifest.update(extra_manifest)
        with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        sys.stdout.write(text)
    return fingerprint


def _system_header(name, source, config):
    cfg = config.describe()
    return [
        f"# system: {name} {json.dumps(source, sort_keys=True)}",
        "# config: " + " ".join(f"{k}={v}" for k, v in sorted(cfg.items())),
    ]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_integrate(args):
    config = _build_config(args)
    system, source = _build_system(args, config)
    x0 = _split_csv(args.x0, "--x0")
    manifest = {
        "command": "integrate",
        "system": source,
        "x0": x0,
        "time": args.time,
        "direction": args.direction,
        "grid": args.grid,
        "precision": config.describe(),
        "digits": args.digits,
    }
    header = [f"# fgbfi integrate direction={args.direction}"]
    header += _system_header(system.name, source, config)
    cols = "t " + " ".join(system.labels) + " degree"
    header.append(f"# columns: {cols}")
    with config.context():
        T = mpfr(args.time)
        if T < 0:
            raise ConfigurationError("-T must be >= 0")
        if T == 0:
            manifest["ball"] = None
            _emit(args, header, [], manifest)
            return EXIT_OK
    ball, ball_desc = _build_ball(args, system, x0, args.time, config,
                                  direction=args.direction)
    manifest["ball"] = ball_desc
    traj = construct_trajectory(system, x0, args.time, args.direction,
                                ball, config)
    samples = dense_sample(traj, args.grid)
    # per-sample degree of the containing step
    rows = []
    with config.context():
        ends = []
        acc = mpfr(0)
        for st in traj.steps:
            acc += abs(st.dt)
            ends.append(acc)
        ends[-1] = traj.total_time
        idx = 0
        way = traj.direction
        for t, state in samples:
            while idx < len(ends) - 1 and t > ends[idx]:
                idx += 1
            t_signed = t if way > 0 else -t
            row = format_mpfr(t_signed, 6) + " " + " ".join(
                format_mpfr(v, args.digits) for v in state
            ) + f" {traj.steps[idx].degree}"
            rows.append(row)
    stats = traj.stats
    header.append(
        "# degrees: min={min_degree} max={max_degree} "
        "config_min={config_min_degree} config_max={config_max_degree}".format(**stats)
    )
    _emit(args, header, rows, manifest, extra_manifest={"degree_stats": stats})
    return EXIT_OK


def cmd_verify(args):
    config = _build_config(args)
    system, source = _build_system(args, config)
    x0 = _split_csv(args.x0, "--x0")
    manifest = {
        "command": "verify",
        "system": source,
        "x0": x0,
        "time": args.time,
        "precision": config.describe(),
    }
    header = ["# fgbfi verify"]
    header += _system_header(system.name, source, config)
    with config.context():
        T = mpfr(args.time)
        if T < 0:
            raise ConfigurationError("-T must be >= 0")
    if T == 0:
        ball_desc = None
        with config.context():
            unit_ball = BoundingBall(
                center=tuple(mpfr(v) for v in x0), radius=mpfr(1)
            )
        report = verify_round_trip(system, x0, args.time, unit_ball, config)
    else:
        ball, ball_desc = _build_ball(args, system, x0, args.time, config)
        report = verify_round_trip(system, x0, args.time, ball, config)
    manifest["ball"] = ball_desc
    rows = []
    for i, lbl in enumerate(system.labels):
        rows.append(
            f"forward_endpoint_{lbl}: "
            + format_mpfr(report.forward_endpoint[i], args.digits)
        )
    for i, lbl in enumerate(system.labels):
        rows.append(
            f"backward_endpoint_{lbl}: "
            + format_mpfr(report.backward_endpoint[i], args.digits)
        )
    for i, lbl in enumerate(system.labels):
        rows.append(
            f"deviation_{lbl}: " + format_mpfr(report.deviations[i], 6, "e")
        )
    rows.append("max_deviation: " + format_mpfr(report.max_deviation, 6, "e"))
    rows.append(f"eps_roundtrip: {report.eps_roundtrip}")
    rows.append(
        f"forward_degrees: min={report.forward_degrees[0]} "
        f"max={report.forward_degrees[1]}"
    )
    rows.append(
        f"backward_degrees: min={report.backward_degrees[0]} "
        f"max={report.backward_degrees[1]}"
    )
    rows.append(f"passed: {'true' if report.passed else 'false'}")
    _emit(args, header, rows, manifest)
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_returns(args):
    config = _build_config(args)
    system, source = _build_system(args, config)
    x0 = _split_csv(args.x0, "--x0")
    if args.window < 1:
        raise UsageError("--window must be >= 1")
    manifest = {
        "command": "returns",
        "system": source,
        "x0": x0,
        "time": args.time,
        "grid": args.grid,
        "window": args.window,
        "precision": config.describe(),
    }
    ball, ball_desc = _build_ball(args, system, x0, args.time, config)
    manifest["ball"] = ball_desc
    header = ["# fgbfi returns"]
    header += _system_header(system.name, source, config)
    header.append("# columns: n t " + " ".join(system.labels) + " rho")
    traj = construct_trajectory(system, x0, args.time, "forward", ball, config)
    samples = dense_sample(traj, args.grid)
    series = distance_series(traj, args.grid)
    states = [s[1] for s in samples]
    events = find_returns(series, window=args.window, states=states)
    rows = []
    for ev in events:
        rows.append(
            f"{ev.index} " + format_mpfr(ev.t, 3) + " "
            + " ".join(format_mpfr(v, args.digits) for v in ev.state)
            + " " + format_mpfr(ev.rho, 6)
        )
    # near-period summary from the spacing of alternating events
    summary = []
    with config.context():
        ts = [ev.t for ev in events]
        even_gaps = [ts[i + 2] - ts[i] for i in range(0, len(ts) - 2, 2)]
        odd_gaps = [ts[i + 2] - ts[i] for i in range(1, len(ts) - 2, 2)]
        if even_gaps:
            mean = sum(even_gaps, mpfr(0)) / len(even_gaps)
            summary.append("# even-index spacing: " + format_mpfr(mean, 3)
                           + f" over {len(even_gaps)} gaps")
        if odd_gaps:
            mean = sum(odd_gaps, mpfr(0)) / len(odd_gaps)
            summary.append("# odd-index spacing: " + format_mpfr(mean, 3)
                           + f" over {len(odd_gaps)} gaps")
    _emit(args, header + summary, rows, manifest)
    return EXIT_OK


def cmd_rk4_compare(args):
    config = _build_config(args)
    system, source = _build_system(args, config)
    x0 = _split_csv(args.x0, "--x0")
    rk_steps = _split_csv(args.rk_steps, "--rk-steps")
    manifest = {
        "command": "rk4-compare",
        "system": source,
        "x0": x0,
        "time": args.time,
        "rk_steps": rk_steps,
        "precision": config.describe(),
    }
    ball, ball_desc = _build_ball(args, system, x0, args.time, config)
    manifest["ball"] = ball_desc
    header = ["# fgbfi rk4-compare"]
    header += _system_header(system.name, source, config)
    header.append("# columns: dt_rk error")
    reference = construct_trajectory(system, x0, args.time, "forward",
                                     ball, config)
    rows = []
    errors = []
    for h in rk_steps:
        cmp_ = rk4_error(system, x0, h, args.time, reference, config)
        rows.append(h + " " + format_mpfr(cmp_.error, 6, "e"))
        errors.append((float(mpfr(h)), float(cmp_.error)))
    stats = reference.stats
    summary = [
        "# reference degrees: min={min_degree} max={max_degree} "
        "config_min={config_min_degree} config_max={config_max_degree}".format(**stats)
    ]
    slope = None
    if len(errors) >= 2:
        xs = [math.log(h) for h, _ in errors]
        ys = [math.log(e) for _, e in errors if e > 0]
        if len(ys) == len(xs):
            mx = sum(xs) / len(xs)
            my = sum(ys) / len(ys)
            denom = sum((x - mx) ** 2 for x in xs)
            if denom > 0:
                slope = sum(
                    (x - mx) * (y - my) for x, y in zip(xs, ys)
                ) / denom
                summary.append(f"# convergence order (log-log slope): {slope:.3f}")
    _emit(args, header + summary, rows, manifest,
          extra_manifest={"degree_stats": stats, "convergence_order": slope})
    return EXIT_OK


def _parse_groups(args, system):
    if args.vectors:
        vecs = []
        for chunk in args.vectors.split(";"):
            vec = _split_csv(chunk, "--vectors")
            if len(vec) != system.n:
                raise UsageError(
                    f"each vector needs {system.n} components, got {len(vec)}"
                )
            vecs.append(tuple(vec))
        return [PerturbationGroup("custom", tuple(vecs))]
    catalog = builtin_groups()
    labels = _split_csv(args.groups, "--groups")
    groups = []
    for lbl in labels:
        if lbl not in catalog:
            raise UsageError(
                f"unknown group {lbl!r}; available: " + ", ".join(catalog)
            )
        if system.n != 3:
            raise UsageError(
                "builtin groups are 3-dimensional; pass --vectors for "
                f"a {system.n}-dimensional system"
            )
        groups.append(catalog[lbl])
    return groups


def cmd_lyapunov(args):
    config = _build_config(args)
    system, source = _build_system(args, config)
    x0 = _split_csv(args.x0, "--x0")
    with config.context():
        T = mpfr(args.time)
        if not T > 0:
            raise ConfigurationError("-T must be positive")
        if args.segments is not None:
            segments = args.segments
        else:
            segments = max(1, int(round(float(T / mpfr(args.tau)))))
    if segments < 1:
        raise UsageError("-M must be >= 1")
    groups = _parse_groups(args, system)
    manifest = {
        "command": "lyapunov",
        "system": source,
        "x0": x0,
        "time": args.time,
        "segments": segments,
        "groups": [g.label for g in groups],
        "vectors": args.vectors,
        "precision": config.describe(),
    }
    ball, ball_desc = _build_ball(args, system, x0, args.time, config)
    manifest["ball"] = ball_desc
    header = ["# fgbfi lyapunov"]
    header += _system_header(system.name, source, config)
    rows = []
    results = []
    with config.context():
        tau = mpfr(args.time) / segments
    header.append(
        f"# T={args.time} M={segments} tau=" + format_mpfr(tau, 6, "e")
    )
    header.append("# columns: group " + " ".join(
        f"lambda{i+1}" for i in range(system.n)
    ) + " D_KY")
    for group in groups:
        res = benettin(system, x0, group, args.time, segments, ball, config)
        results.append(res)
        rows.append(
            f"{res.group_label} "
            + " ".join(format_mpfr(v, args.digits) for v in res.exponents)
            + " " + format_mpfr(res.d_ky, 4)
        )
    summary = []
    for res in results:
        summary.append(
            f"# group {res.group_label}: sorted="
            + ",".join(format_mpfr(v, args.digits) for v in res.exponents_sorted)
            + " drift="
            + ",".join(format_mpfr(d, 2, "e") for d in res.drift)
            + f" stabilized={'true' if res.stabilized else 'false'}"
        )
    if args.divergence_grid:
        traj = construct_trajectory(system, x0, args.time, "forward", ball,
                                    config, keep_steps=True)
        div = divergence_average(traj, args.divergence_grid)
        summary.append("# divergence average: " + format_mpfr(div, args.digits))
    _emit(args, header + summary, rows, manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(
        prog="fgbfi",
        description="Verified power-series integration of quadratic chaotic "
                    "ODE systems (guaranteed steps, backward-forward checks, "
                    "Lyapunov spectra).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="construct a trajectory and export "
                                         "dense samples")
    _add_common(p)
    p.add_argument("--direction", choices=["forward", "backward"],
                   default="forward", help="time direction (default forward)")
    p.add_argument("--grid", default="0.001",
                   help="dense output grid step, time units (default 0.001)")
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("verify", help="backward-forward round-trip check "
                                      "(exit 0 iff passed)")
    _add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("returns", help="scan rho(t) for recurrences with the "
                                       "initial point")
    _add_common(p)
    p.add_argument("--grid", default="0.001",
                   help="dense grid step, time units (default 0.001)")
    p.add_argument("--window", type=int, default=5,
                   help="local-minimum window, grid points (default 5)")
    p.set_defaults(func=cmd_returns)

    p = sub.add_parser("rk4-compare", help="fixed-step RK4 endpoint errors "
                                           "against the series reference")
    _add_common(p)
    p.add_argument("--rk-steps", default="0.05,0.01,0.005,0.001",
                   help="comma-separated RK4 step sizes, time units")
    p.set_defaults(func=cmd_rk4_compare)

    p = sub.add_parser("lyapunov", help="Lyapunov spectrum via the "
                                        "variational extension")
    _add_common(p, time_default="200")
    p.add_argument("-M", "--segments", type=int, default=None,
                   help="number of renormalization segments "
                        "(default: time/tau)")
    p.add_argument("--tau", default="0.01",
                   help="segment length when -M is omitted, time units "
                        "(default 0.01)")
    p.add_argument("--groups", default="I,II,III,IV",
                   help="builtin perturbation groups to run (default all)")
    p.add_argument("--vectors",
                   help="custom group: vectors separated by ';', components "
                        "by ',' (overrides --groups)")
    p.add_argument("--divergence-grid", default=None,
                   help="also report the trace-Jacobian time average over "
                        "this dense grid (time units)")
    p.set_defaults(func=cmd_lyapunov)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"fgbfi: error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DefinitionError as exc:
        print(f"fgbfi: definition error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BallEscapeError as exc:
        print(f"fgbfi: {exc}", file=sys.stderr)
        return EXIT_BALL_ESCAPE
    except (ConfigurationError, AccuracyError, LinearDependenceError) as exc:
        print(f"fgbfi: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
