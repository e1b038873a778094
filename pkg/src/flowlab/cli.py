"""Command-line entry point: ``flowlab <subcommand> [options]``.

Every subcommand accepts ``--config file.json`` whose keys are the long
option names (dashes or underscores); explicit flags override the file.
Unknown keys are rejected.  Reports are JSON and embed the resolved config.

Exit codes: 0 success, 2 validation error, 3 numerical failure (blow-up or
non-convergence where success was required).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import BACKEND_NAME

log = logging.getLogger("flowlab")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


class ValidationError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


# -- shared helpers -----------------------------------------------------------------

def _family(args):
    from .families import NAMED_FAMILIES, ControlFamily, family_from_spec
    from .polyvec import parse_field

    spec = args.family
    if spec in NAMED_FAMILIES:
        return NAMED_FAMILIES[spec]()
    if spec == "resnet":
        return ControlFamily.resnet(args.dim, args.activation, args.weight_structure)
    if spec == "affine":
        if not args.basis:
            raise ValidationError("--family affine needs at least one --basis field")
        return ControlFamily.affine([parse_field(b) for b in args.basis])
    if spec.startswith("{"):
        return family_from_spec(json.loads(spec))
    if spec.startswith("@"):
        return family_from_spec(json.loads(Path(spec[1:]).read_text()))
    raise ValidationError(f"unknown family {spec!r}; use a named family, 'resnet', 'affine', JSON or @file")


def _add_family_args(p, default="area_preserving"):
    g = p.add_argument_group("family")
    g.add_argument("--family", default=default,
                   help="area_preserving | origin_fixed | cubic_quadratic | resnet | affine | JSON | @file "
                        "(default: %(default)s)")
    g.add_argument("--dim", type=int, default=2, help="resnet dimension (default: %(default)s)")
    g.add_argument("--activation", default="tanh", choices=["tanh", "sigmoid", "relu", "identity"])
    g.add_argument("--weight-structure", default="full",
                   choices=["full", "diagonal_W", "translation_only", "diagonal_W_and_A"])
    g.add_argument("--basis", action="append", default=[], help="affine basis field (repeatable)")


def _points(args, d):
    from .ensemble import Ensemble

    if args.points:
        return Ensemble.from_csv(args.points)
    if args.N is None or args.N < 1:
        raise ValidationError("ensemble size N must be >= 1")
    return Ensemble.random(args.N, d, args.seed)


def _schedule(args, family):
    from .flow import ControlSchedule

    if args.schedule:
        text = args.schedule.strip()
        sch = ControlSchedule.from_dict(json.loads(text)) if text.startswith("{") else ControlSchedule.load(text)
    else:
        rng = np.random.default_rng(args.seed)
        rows = args.param_scale * rng.standard_normal((args.segments, family.num_params))
        sch = ControlSchedule.uniform(rows, args.total_time)
    family.check_params(sch.params)
    return sch


def _add_schedule_args(p):
    g = p.add_argument_group("schedule")
    g.add_argument("--schedule", help="schedule JSON (inline or file); otherwise a seeded random schedule")
    g.add_argument("--segments", type=int, default=4, help="random schedule segments (default: %(default)s)")
    g.add_argument("--total-time", type=float, default=1.0, help="random schedule total time (default: %(default)s)")
    g.add_argument("--param-scale", type=float, default=1.0, help="random schedule parameter std (default: %(default)s)")


# -- subcommands ------------------------------------------------------------------

def run_bracket(args):
    from .polyvec import lie_bracket, parse_field, parse_polynomial

    def field(text):
        if args.dim is not None and not text.strip().startswith(("(", "[", "v:")):
            from .polyvec import PolyVectorField

            return PolyVectorField([parse_polynomial(text, args.dim)])
        return parse_field(text)

    f, g = field(args.f), field(args.g)
    res = lie_bracket(f, g)
    print(str(res))
    return {"f": str(f), "g": str(g), "bracket": str(res)}


def run_closure(args):
    from .liealg import lie_closure
    from .polyvec import parse_field

    if args.generator:
        gens = [parse_field(s) for s in args.generator]
    else:
        gens = list(_family(args).basis) if args.family != "resnet" else None
        if gens is None:
            raise ValidationError("closure needs polynomial generators")
    cb = lie_closure(gens, args.degree_cap, args.depth_cap)
    print(cb.to_text())
    return {"summary": cb.summary(), "basis": [str(b) for b in cb.basis]}


def run_rank(args):
    from .ensemble import lie_rank, span_rank, vandermonde_certificate

    fam = _family(args)
    X = _points(args, fam.dimension)
    if args.method == "span":
        rep = span_rank(fam, X, args.seed, args.num_samples, args.svd_tol)
    elif args.method == "lie":
        rep = lie_rank(fam, X, args.degree_cap, args.depth_cap, args.svd_tol)
    else:
        cert = vandermonde_certificate(X, args.seed)
        out = cert.to_dict()
        out.pop("matrix")
        return {"certificate": out, "points": X.points.tolist()}
    out = rep.to_dict()
    out["points"] = X.points.tolist()
    return out


def run_flow(args):
    from .flow import integrate, integrate_with_jacobian

    fam = _family(args)
    sch = _schedule(args, fam)
    x0 = np.array(args.x0 if args.x0 else [0.0] * fam.dimension, dtype=float)
    if x0.shape[0] != fam.dimension:
        raise ValidationError(f"--x0 has {x0.shape[0]} entries, family dimension is {fam.dimension}")
    if args.jacobian:
        res = integrate_with_jacobian(fam, sch, x0, args.step, args.threshold)
    else:
        res = integrate(fam, sch, x0, args.step, args.threshold,
                        record_every=args.record_every if args.trajectory else None)
        if args.trajectory and res.trajectory is not None:
            res.write_trajectory_csv(args.trajectory)
    out = {"result": res.to_dict(), "schedule": sch.to_dict()}
    if res.blew_up and not args.allow_blowup:
        raise NumericalFailure(res.diagnostic, out)
    return out


def run_train(args):
    from .trainer import Dataset, TrainConfig, train, write_loss_csv

    fam = _family(args)
    if args.dataset:
        ds = Dataset.from_dict(json.loads(Path(args.dataset).read_text()))
    else:
        if args.N is None or args.N < 1:
            raise ValidationError("dataset size N must be >= 1")
        ds = Dataset.random(args.N, fam.dimension, args.seed)
    cfg = TrainConfig(
        family=fam,
        num_segments=args.segments,
        segment_duration=args.total_time / args.segments,
        learning_rate=args.lr,
        lr_final=args.lr_final,
        max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        seed=args.seed,
        step_size=args.step,
        loss_target=args.loss_target,
        init_scale=args.init_scale,
        train_durations=args.train_durations,
        optimizer=args.optimizer,
        restarts=args.restarts,
        param_penalty=args.param_penalty,
    )
    rep = train(cfg, ds)
    if args.loss_csv:
        write_loss_csv(args.loss_csv, rep.loss_history, rep.best_loss_history)
    out = {"report": rep.to_dict(), "dataset": ds.to_dict()}
    if not rep.converged and args.require_converged:
        raise NumericalFailure(f"training did not reach max error {args.loss_target} "
                               f"(best {rep.final_max_error:.3g})", out)
    return out


def _target(spec):
    from .approx import TargetFunction

    if spec == "zero":
        return TargetFunction.constant([0.0, 0.0])
    if spec == "swap":
        return TargetFunction.coordinate_swap()
    if spec.startswith("{"):
        return TargetFunction.from_dict(json.loads(spec))
    if spec.startswith("@"):
        return TargetFunction.from_dict(json.loads(Path(spec[1:]).read_text()))
    raise ValidationError(f"unknown target {spec!r}; use zero, swap, JSON or @file")


def run_lp(args):
    from .approx import DomainSpec, lp_report

    fam = _family(args)
    sch = _schedule(args, fam)
    if args.domain == "disc":
        dom = DomainSpec.disc(radius=args.radius, radial=args.radial, angular=args.angular)
    else:
        dom = DomainSpec.box([args.lo] * fam.dimension, [args.hi] * fam.dimension, args.resolution)
    if args.monte_carlo:
        dom = dom.monte_carlo(args.monte_carlo, args.seed)
    rep = lp_report(fam, sch, _target(args.target), dom, args.p, args.step, args.normalize)
    out = {"lp": rep, "schedule": sch.to_dict()}
    if not math.isfinite(rep["error"]):
        raise NumericalFailure("flow blew up on the quadrature grid", out)
    return out


def run_gronwall(args):
    from .families import ControlFamily
    from .flow import ControlSchedule, gronwall_check

    fam = ControlFamily.resnet(args.dim, "tanh", "full")
    rng = np.random.default_rng(args.seed)
    d = args.dim
    results = []
    for _ in range(args.runs):
        rows = []
        for _ in range(args.segments):
            W = rng.uniform(-1, 1, (d, d))
            W /= max(1.0, np.abs(W).sum(axis=1).max())  # row sums of |W| <= 1
            A = rng.uniform(-1, 1, (d, d))
            b = rng.uniform(-1, 1, d)
            rows.append((W, A, b))
        theta = np.stack([fam.pack(W, A, b) for W, A, b in rows])
        sch = ControlSchedule.uniform(theta, args.total_time)
        normW = max(np.abs(W).sum(axis=1).max() for W, _, _ in rows)
        normA = max(np.abs(A).sum(axis=1).max() for _, A, _ in rows)
        L = d * normW * normA
        x0 = rng.uniform(-1, 1, d)
        rep = gronwall_check(fam, sch, x0, args.step, c1=float(d), c2=0.0, L=L)
        results.append(rep.to_dict() | {"L": L})
    ok = all(r["bound_norm_ok"] and r["bound_lip_ok"] for r in results)
    out = {"all_bounds_hold": ok, "runs": results}
    if not ok:
        raise NumericalFailure("a Gronwall bound was violated", out)
    return out


def run_monotone1d(args):
    from .families import cubic_quadratic_family
    from .flow import ControlSchedule, monotone_1d_check

    fam = cubic_quadratic_family()
    rng = np.random.default_rng(args.seed)
    outcomes = []
    for _ in range(args.runs):
        rows = args.param_scale * rng.standard_normal((args.segments, 2))
        sch = ControlSchedule.uniform(rows, args.total_time)
        pts = np.sort(rng.uniform(-1, 1, args.points))
        outcomes.append(monotone_1d_check(fam, sch, pts, args.step))
    out = {
        "runs": args.runs,
        "monotone": sum(o is True for o in outcomes),
        "violations": sum(o is False for o in outcomes),
        "indeterminate": sum(o is None for o in outcomes),
    }
    if out["violations"]:
        raise NumericalFailure("a one-dimensional flow reordered points", out)
    return out


def run_counterexamples(args):
    from .approx import fixed_point_check, volume_floor_check
    from .ensemble import Ensemble, lie_rank, vandermonde_certificate
    from .families import area_preserving_family, origin_fixed_family
    from .flow import ControlSchedule
    from .liealg import verify_decoupled_closure
    from .trainer import Dataset, TrainConfig, shrink_then_interpolate, train

    rng = np.random.default_rng(args.seed)
    if args.which == "uip-not-uap":
        fam = area_preserving_family()
        ranks = {}
        for N in range(2, args.max_n + 1):
            rep = lie_rank(fam, Ensemble.random(N, 2, args.seed + N))
            ranks[str(N)] = rep.achieved_rank
        certs = [vandermonde_certificate(Ensemble.random(N, 2, args.seed + N), args.seed).invertible
                 for N in range(1, args.max_n + 1)]
        floors = []
        for _ in range(args.runs):
            sch = ControlSchedule.uniform(rng.uniform(-1, 1, (4, 3)), rng.uniform(0.5, 2.0))
            floors.append(volume_floor_check(sch, args.step))
        applicable = [f for f in floors if f.applicable]
        from .approx import squeeze_disc

        adv_sched, _ = squeeze_disc(args.step, args.adversarial_iters, args.seed)
        adv_check = volume_floor_check(adv_sched, args.step)
        out = {
            "lie_rank_full": all(ranks[str(N)] == 2 * N for N in range(2, args.max_n + 1)),
            "lie_ranks": ranks,
            "certificates_invertible": all(certs),
            "volume_floor_respected": all(f.floor_respected for f in applicable) and adv_check.floor_respected,
            "volume_min_error_sq": min(f.error_sq for f in applicable) if applicable else None,
            "volume_runs_applicable": len(applicable),
            "adversarial_error_sq": adv_check.error_sq,
            "floor": math.pi / 2,
            "budget": adv_check.budget,
        }
        if not (out["lie_rank_full"] and out["certificates_invertible"] and out["volume_floor_respected"]):
            raise NumericalFailure("a counterexample property failed", out)
        return out

    fam = origin_fixed_family()
    pins = []
    for _ in range(args.runs):
        sch = ControlSchedule.uniform(rng.uniform(-1, 1, (4, 6)), rng.uniform(0.5, 2.0))
        pins.append(fixed_point_check(sch, args.step).pinned)
    cfg = TrainConfig(fam, num_segments=4, segment_duration=0.5, max_iters=args.adversarial_iters,
                      seed=args.seed, step_size=args.step)
    mover = train(cfg, Dataset([[0.0, 0.0], [0.5, -0.5]], [[1.0, 1.0], [0.25, 0.5]]))
    errors = {}
    for cells in args.cells:
        res = shrink_then_interpolate(_target("swap"), cells)
        errors[str(cells)] = res.lp_error
    out = {
        "origin_pinned": all(pins),
        "decoupled_closure_ok": verify_decoupled_closure(4),
        "origin_transport_error": mover.final_max_error,
        "origin_transport_converged": mover.converged,
        "shrink_interp_error": errors,
    }
    if not (out["origin_pinned"] and out["decoupled_closure_ok"]):
        raise NumericalFailure("a counterexample property failed", out)
    return out


# -- parser ----------------------------------------------------------------------------

def _common(p):
    g = p.add_argument_group("global")
    g.add_argument("--config", help="JSON file with option values (flags override)")
    g.add_argument("--seed", type=int, default=0, help="seed for all randomness (default: %(default)s)")
    g.add_argument("--output", help="write the JSON report here instead of stdout")
    g.add_argument("--step", type=float, default=1e-2, help="RK4 step size (default: %(default)s)")
    g.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    g.add_argument("--no-timestamp", action="store_true", help="omit the timestamp for byte-identical output")
    g.add_argument("--threads", type=int, default=None, help="cap on numba worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"flowlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bracket", help="Lie bracket [f, g] = Dg f - Df g of two polynomial fields")
    p.add_argument("f", help='field, e.g. "(x1^2, x2)" or "v:x1^2*x2^2"')
    p.add_argument("g")
    p.add_argument("--dim", type=int, default=None, help="treat bare polynomials as 1-component fields in this dimension")
    _common(p)
    p.set_defaults(func=run_bracket)

    p = sub.add_parser("closure", help="finite-slice Lie closure of polynomial generators")
    p.add_argument("--generator", action="append", default=[], help="generator field (repeatable)")
    p.add_argument("--degree-cap", type=int, default=8)
    p.add_argument("--depth-cap", type=int, default=8)
    _add_family_args(p)
    _common(p)
    p.set_defaults(func=run_closure)

    p = sub.add_parser("rank", help="ensemble rank certificate (span, lie or vandermonde)")
    p.add_argument("--method", choices=["span", "lie", "vandermonde"], default="lie")
    p.add_argument("--N", type=int, default=3, help="random ensemble size (default: %(default)s)")
    p.add_argument("--points", help="ensemble CSV, one point per row")
    p.add_argument("--num-samples", type=int, default=512)
    p.add_argument("--svd-tol", type=float, default=1e-8)
    p.add_argument("--degree-cap", type=int, default=8)
    p.add_argument("--depth-cap", type=int, default=8)
    _add_family_args(p)
    _common(p)
    p.set_defaults(func=run_rank)

    p = sub.add_parser("flow", help="integrate one point under a schedule")
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--jacobian", action="store_true", help="also integrate the variational equation")
    p.add_argument("--threshold", type=float, default=1e8, help="blow-up threshold (default: %(default)s)")
    p.add_argument("--trajectory", help="CSV path for the sampled trajectory")
    p.add_argument("--record-every", type=int, default=10)
    p.add_argument("--allow-blowup", action="store_true", help="exit 0 even if the flow blows up")
    _add_family_args(p)
    _add_schedule_args(p)
    _common(p)
    p.set_defaults(func=run_flow)

    p = sub.add_parser("train", help="steer an ensemble to targets")
    p.add_argument("--dataset", help="dataset JSON {inputs, targets}; otherwise random")
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--segments", type=int, default=12)
    p.add_argument("--total-time", type=float, default=6.0)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--grad-tol", type=float, default=0.0)
    p.add_argument("--loss-target", type=float, default=1e-2, help="max-norm interpolation tolerance")
    p.add_argument("--init-scale", type=float, default=0.1)
    p.add_argument("--train-durations", action="store_true")
    p.add_argument("--optimizer", choices=["adam", "lm"], default="adam",
                   help="adam, or Levenberg-Marquardt on the residuals (default: %(default)s)")
    p.add_argument("--restarts", type=int, default=0, help="extra seeded initialisations (default: %(default)s)")
    p.add_argument("--param-penalty", type=float, default=0.0, help="weight of |theta|^2 (default: %(default)s)")
    p.add_argument("--loss-csv", help="CSV sidecar for the loss history")
    p.add_argument("--require-converged", action=argparse.BooleanOptionalAction, default=True)
    _add_family_args(p, default="resnet")
    _common(p)
    p.set_defaults(func=run_train)

    p = sub.add_parser("lp", help="L^p distance between a flow map and a target")
    p.add_argument("--target", default="zero", help="zero | swap | JSON | @file")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--domain", choices=["disc", "box"], default="disc")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--radial", type=int, default=128)
    p.add_argument("--angular", type=int, default=256)
    p.add_argument("--lo", type=float, default=-1.0)
    p.add_argument("--hi", type=float, default=1.0)
    p.add_argument("--resolution", type=int, default=101)
    p.add_argument("--monte-carlo", type=int, default=0, help="use this many Monte Carlo nodes instead")
    p.add_argument("--normalize", action="store_true", help="probability-normalised weights")
    _add_family_args(p)
    _add_schedule_args(p)
    _common(p)
    p.set_defaults(func=run_lp)

    p = sub.add_parser("counterexamples", help="interpolation without approximation, and the converse")
    p.add_argument("--which", choices=["uip-not-uap", "uap-not-uip"], required=True)
    p.add_argument("--max-n", type=int, default=6)
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--adversarial-iters", type=int, default=300)
    p.add_argument("--cells", type=int, nargs="+", default=[2, 4])
    _common(p)
    p.set_defaults(func=run_counterexamples)

    p = sub.add_parser("gronwall", help="a-priori growth and Lipschitz bounds on bounded tanh flows")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--runs", type=int, default=50)
    p.add_argument("--segments", type=int, default=3)
    p.add_argument("--total-time", type=float, default=2.0)
    _common(p)
    p.set_defaults(func=run_gronwall)

    p = sub.add_parser("monotone1d", help="order preservation of one-dimensional flows")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--segments", type=int, default=4)
    p.add_argument("--total-time", type=float, default=1.0)
    p.add_argument("--param-scale", type=float, default=0.3,
                   help="parameter std; larger values make cubic flows blow up (default: %(default)s)")
    _common(p)
    p.set_defaults(func=run_monotone1d)
    return parser


def _subparser(parser, name):
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _resolve(parser, argv):
    """Parse ``argv``, folding in ``--config`` values underneath explicit flags."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    data = json.loads(Path(args.config).read_text())
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    sp = _subparser(parser, args.command)
    known = {a.dest for a in sp._actions if a.dest not in ("help", "config")}
    norm = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(norm) - known)
    if unknown:
        raise ValidationError(f"unknown config fields for '{args.command}': {unknown}")
    sp.set_defaults(**norm)
    return parser.parse_args(argv)


def _resolved_config(args) -> dict:
    skip = {"func", "output", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _resolve(parser, argv)
    except ValidationError as exc:
        print(f"flowlab: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as exc:
        print(f"flowlab: error reading config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        try:
            import numba

            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        except ImportError:
            pass

    from .polyvec import ParseError

    code = EXIT_OK
    try:
        result = args.func(args)
    except ParseError as exc:
        print(f"flowlab {args.command}: parse error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"flowlab {args.command}: numerical failure: {exc}", file=sys.stderr)
        result, code = exc.report, EXIT_NUMERICAL
    except (ValidationError, ValueError, TypeError, KeyError, OSError) as exc:
        print(f"flowlab {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except RuntimeError as exc:  # TrainingError and friends
        print(f"flowlab {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    if result is None:
        return code
    report = {
        "command": args.command,
        "version": __version__,
        "backend": BACKEND_NAME,
        "config": _resolved_config(args),
        "exit_code": code,
        "result": result,
    }
    if not args.no_timestamp:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    if args.output:
        Path(args.output).write_text(text + "\n")
    elif args.command != "bracket":
        print(text)
    return code


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


if __name__ == "__main__":
    sys.exit(main())
