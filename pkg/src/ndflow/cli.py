"""Command-line pipeline: fit, match, transform, nyul, experiment.

Flag precedence: package defaults are overridden by a ``--config`` JSON
file, which is in turn overridden by flags given explicitly on the command
line.  Errors are reported as one JSON object on standard error and map to
exit codes 2 (invalid input), 3 (numerical failure) and 4 (I/O failure).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import baselines, dpgmm, flow, histogram, l2match, synthcohort
from .errors import InvalidInputError, NdflowError
from .pipeline import default_mesh_range

_DPGMM_FIELDS = ("concentration", "truncation", "prior_mean", "prior_mean_strength",
                 "prior_shape", "prior_rate", "max_iterations", "elbo_rel_tolerance",
                 "prune_threshold", "seed")
_OPTIM_FIELDS = ("max_iterations", "grad_norm_tolerance", "initial_step",
                 "backtracking_factor")


def _merge_config(args: argparse.Namespace, fields, section: str, prefix: str = "") -> dict:
    """defaults < config file < explicit flags, for one config section."""
    merged: dict = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{args.config}: not valid JSON: {exc}") from exc
        merged.update(data.get(section, {}))
    for name in fields:
        value = getattr(args, (prefix + name).replace("-", "_"), None)
        if value is not None:
            merged[name] = value
    return merged


def _dpgmm_config(args, prefix: str = "") -> dpgmm.DpgmmConfig:
    return dpgmm.DpgmmConfig(**_merge_config(args, _DPGMM_FIELDS, "dpgmm", prefix))


def _optim_config(args, prefix: str = "") -> l2match.OptimConfig:
    return l2match.OptimConfig(**_merge_config(args, _OPTIM_FIELDS, "optim", prefix))


def _add_config_flag(parser):
    parser.add_argument("--config", help="JSON config file; explicit flags override it")


def _add_dpgmm_flags(parser, prefix: str = ""):
    g = parser.add_argument_group("mixture fit")
    g.add_argument(f"--{prefix}concentration", type=float)
    g.add_argument(f"--{prefix}truncation", type=int)
    g.add_argument(f"--{prefix}prior-mean", type=float)
    g.add_argument(f"--{prefix}prior-mean-strength", type=float)
    g.add_argument(f"--{prefix}prior-shape", type=float)
    g.add_argument(f"--{prefix}prior-rate", type=float)
    g.add_argument(f"--{prefix}max-iterations", type=int)
    g.add_argument(f"--{prefix}elbo-rel-tolerance", type=float)
    g.add_argument(f"--{prefix}prune-threshold", type=float)
    g.add_argument(f"--{prefix}seed", type=int)


def _add_optim_flags(parser, prefix: str = ""):
    g = parser.add_argument_group("divergence minimisation")
    g.add_argument(f"--{prefix}max-iterations", type=int)
    g.add_argument(f"--{prefix}grad-norm-tolerance", type=float)
    g.add_argument(f"--{prefix}initial-step", type=float)
    g.add_argument(f"--{prefix}backtracking-factor", type=float)


def cmd_fit(args) -> int:
    h = histogram.load_histogram(args.histogram)
    init = None
    if args.init:
        ref = dpgmm.load_mixture(args.init)
        init = ref.affine(histogram.affine_match(ref.moments(),
                                                 histogram.compute_moments(h)))
    mixture = dpgmm.fit_dpgmm(h, _dpgmm_config(args), init=init)
    dpgmm.save_mixture(mixture, args.out)
    return 0


def cmd_match(args) -> int:
    source = dpgmm.load_mixture(args.source)
    target = dpgmm.load_mixture(args.target)
    pre = histogram.affine_match(source.moments(), target.moments())
    result = l2match.match_mixtures(source.affine(pre), target, _optim_config(args))
    payload = result.to_dict()
    payload["affine"] = {"scale": pre.scale, "offset": pre.offset}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")
    return 0


def _load_match_payload(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON: {exc}") from exc
    result = l2match.MatchResult.from_dict(payload)
    affine = payload.get("affine", {"scale": 1.0, "offset": 0.0})
    try:
        pre = histogram.AffineMap(float(affine["scale"]), float(affine["offset"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: malformed affine entry: {exc}") from exc
    return result, pre


def cmd_transform(args) -> int:
    result, pre = _load_match_payload(args.match)
    values = histogram.load_values(args.values) if args.values else None

    if args.mesh_min is not None and args.mesh_max is not None:
        mesh_range = (args.mesh_min, args.mesh_max)
    else:
        # Derived from the match alone so that forward and inverse runs of
        # the same match build the identical table.
        mesh_range = default_mesh_range(result.initial)
    path = flow.ParameterPath.from_match(result)
    table = flow.integrate_flow(path, mesh_range[0], mesh_range[1],
                                args.mesh_points, args.rk4_steps)
    if args.table_out:
        flow.save_table(table, args.table_out)
    if values is not None and args.values_out:
        if args.invert:
            back = flow.apply_inverse_transform(table, values)
            out = pre.invert()(back)
        else:
            out = flow.apply_transform(table, pre(values))
        histogram.save_values(out, args.values_out)
    return 0


def cmd_nyul(args) -> int:
    train = [histogram.load_histogram(p) for p in args.train]
    reference = baselines.average_landmarks(
        [baselines.extract_landmarks(h) for h in train])
    if args.landmarks_out:
        baselines.save_landmarks(reference, args.landmarks_out)
    if args.histogram and args.values and args.values_out:
        subject = histogram.load_histogram(args.histogram)
        values = histogram.load_values(args.values)
        histogram.save_values(
            baselines.nyul_normalise(subject, reference, values), args.values_out)
    return 0


def cmd_experiment(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        try:
            spec_json = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{args.spec}: not valid JSON: {exc}") from exc
    spec = synthcohort.CohortSpec.from_dict(spec_json)
    cohort = synthcohort.generate_cohort(spec)
    if args.cohort_dir:
        synthcohort.export_cohort(cohort, spec, args.cohort_dir)
    methods = args.methods or list(synthcohort.METHODS)
    artifacts = synthcohort.CohortArtifacts(cohort, bins=args.bins,
                                            dpgmm=_dpgmm_config(args, "fit-"))
    reports = {}
    for method in methods:
        reports[method] = synthcohort.run_normalisation_experiment(
            cohort, method, artifacts=artifacts, optim=_optim_config(args, "optim-"),
            mesh_points=args.mesh_points, rk4_steps=args.rk4_steps)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"spec": spec.to_dict(), "reports": reports}, fh, sort_keys=True)
        fh.write("\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ndflow",
        description="Density-flow intensity normalisation for 1-D histograms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a mixture to a histogram CSV")
    p.add_argument("--histogram", required=True, help="input CSV (center,weight)")
    p.add_argument("--out", required=True, help="output mixture JSON")
    p.add_argument("--init", help="mixture JSON to warm-start from "
                                  "(moment-aligned to this histogram first)")
    _add_config_flag(p)
    _add_dpgmm_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("match", help="match a source mixture towards a target")
    p.add_argument("--source", required=True, help="source mixture JSON")
    p.add_argument("--target", required=True, help="target mixture JSON")
    p.add_argument("--out", required=True, help="output match JSON")
    _add_config_flag(p)
    _add_optim_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("transform", help="build the flow table and map values")
    p.add_argument("--match", required=True, help="match JSON from 'ndflow match'")
    p.add_argument("--values", help="input value stream (one real per line)")
    p.add_argument("--values-out", help="output path for transformed values")
    p.add_argument("--table-out", help="output CSV (x,fx) for the transform table")
    p.add_argument("--mesh-min", type=float)
    p.add_argument("--mesh-max", type=float)
    p.add_argument("--mesh-points", type=int, default=200)
    p.add_argument("--rk4-steps", type=int, default=32)
    p.add_argument("--invert", action="store_true",
                   help="apply the inverse transform to the values")
    _add_config_flag(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("nyul", help="landmark-average normalisation")
    p.add_argument("--train", nargs="+", required=True,
                   help="histogram CSVs used to average the landmarks")
    p.add_argument("--histogram", help="subject histogram CSV")
    p.add_argument("--values", help="subject value stream")
    p.add_argument("--values-out", help="output path for transformed values")
    p.add_argument("--landmarks-out", help="output JSON for averaged landmarks")
    _add_config_flag(p)
    p.set_defaults(func=cmd_nyul)

    p = sub.add_parser("experiment", help="run a synthetic cohort experiment")
    p.add_argument("--spec", required=True, help="cohort spec JSON")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--methods", nargs="+", choices=list(synthcohort.METHODS))
    p.add_argument("--cohort-dir", help="also export the cohort CSVs here")
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--mesh-points", type=int, default=200)
    p.add_argument("--rk4-steps", type=int, default=32)
    _add_config_flag(p)
    _add_dpgmm_flags(p, "fit-")
    _add_optim_flags(p, "optim-")
    p.set_defaults(func=cmd_experiment)
    return parser


def _report_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"kind": kind, "message": message}},
                                sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NdflowError as exc:
        _report_error(exc.kind, str(exc))
        return exc.exit_code
    except OSError as exc:
        _report_error("io", str(exc))
        return 4
    except (ValueError, KeyError, TypeError) as exc:
        _report_error("invalid-input", f"{type(exc).__name__}: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
