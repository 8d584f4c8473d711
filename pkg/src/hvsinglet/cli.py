"""Command line driver.

Subcommands:

* ``validate``: run the admissibility battery on a model, emit a JSON report.
* ``simulate``: estimate correlations for a list of settings, emit CSV.
* ``chsh``: run the four-pair CHSH combination (optimal axes by default).
* ``scan``: sweep a.b and tabulate the correction envelope, emit CSV.
* ``build-recipe``: construct an admissible model from a base function and
  write its JSON spec.

Exit codes: 0 success / all checks pass, 1 a constraint is violated,
2 nothing failed but some Monte Carlo check was inconclusive, 64 usage or
input error. The seed is resolved from --seed, then the HV_SEED environment
variable, then the model spec, then 0.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .geometry import GeometryError, RandomStream, sample_uniform_sphere
from .models import (
    ModelSpecError,
    RECIPE_REGISTRY,
    build_recipe_model,
    load_model,
    model_from_spec,
)
from .simulator import (
    OPTIMAL_CHSH_SETTINGS,
    ExperimentConfig,
    chsh,
    find_chsh_witness,
    run_experiment,
    write_chsh_csv,
    write_correlations_csv,
)
from .validator import ValidatorConfig, run_full_suite

EX_OK = 0
EX_VIOLATION = 1
EX_INCONCLUSIVE = 2
EX_USAGE = 64

_BUILTIN_FAMILIES = ("family1", "family2", "wrongtrial", "cerf")


class UsageError(Exception):
    """Bad arguments or unreadable inputs; maps to exit code 64."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit 2; the contract says 64
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EX_USAGE)


def _add_common(p: argparse.ArgumentParser, *, out_help: str) -> None:
    p.add_argument("--model", required=True, metavar="PATH",
                   help="model spec JSON; a bare family name uses its defaults")
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default: HV_SEED env, then the model spec, then 0)")
    p.add_argument("--grid-n", type=int, default=None, metavar="N",
                   help="override sphere quadrature to N polar x 2N azimuthal nodes")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; results do not depend on this")
    p.add_argument("--out", metavar="PATH", default=None, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hvsinglet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="run the admissibility checks")
    _add_common(p, out_help="write the JSON report here instead of stdout")
    p.add_argument("--lambda-n", type=int, default=2000,
                   help="lambda draws per scanned setting (default 2000)")
    p.add_argument("--settings-n", type=int, default=100,
                   help="setting pairs for the table scans (default 100)")
    p.add_argument("--mc-samples", type=int, default=1_000_000,
                   help="Monte Carlo draws per integral check without quadrature")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="estimate correlations at given settings")
    _add_common(p, out_help="write CSV here instead of stdout")
    p.add_argument("--settings", required=True, metavar="PATH|random:N",
                   help="JSON file with [[a, b], ...] pairs, or random:N")
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--mode", choices=("sampling", "analytic"), default="sampling")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("chsh", help="four-pair CHSH combination")
    _add_common(p, out_help="write CSV here instead of stdout")
    p.add_argument("--settings", default="preset:optimal", metavar="PATH|preset:optimal",
                   help="JSON file with exactly 4 pairs (default: optimal axes)")
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--mode", choices=("sampling", "analytic"), default="sampling")
    p.add_argument("--witness", action="store_true",
                   help="also report the largest per-lambda CHSH value")
    p.set_defaults(func=cmd_chsh)

    p = sub.add_parser("scan", help="sweep a.b and tabulate the correction")
    _add_common(p, out_help="write CSV here instead of stdout")
    p.add_argument("--points", type=int, default=41, help="grid points in [-1, 1]")
    p.add_argument("--lambda-n", type=int, default=2000,
                   help="lambda draws when the model has no quadrature")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("build-recipe", help="construct a model from a base function")
    p.add_argument("f", choices=sorted(RECIPE_REGISTRY), help="base function name")
    p.add_argument("s", type=float, help="envelope exponent, s >= 1")
    p.add_argument("--scalar-measure", choices=("uniform", "two_point"), default="uniform")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--grid-n", type=int, default=32, metavar="N")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", metavar="PATH", default=None,
                   help="where to write the model spec JSON (default: recipe-<f>-s<s>.json)")
    p.set_defaults(func=cmd_build_recipe)
    return parser


# ---------------------------------------------------------------------------
# Helpers


def _resolve_seed(arg_seed: int | None, spec_seed) -> int:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get("HV_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HV_SEED must be an integer, got {env!r}") from None
    if spec_seed is not None:
        return int(spec_seed)
    return 0


def _load_model(args):
    name = args.model
    if not os.path.exists(name) and name in _BUILTIN_FAMILIES:
        return model_from_spec({"family": name}, grid_n=args.grid_n)
    return load_model(name, grid_n=args.grid_n)


def _parse_settings(value: str, seed: int, *, expect: int | None = None) -> np.ndarray:
    if value == "preset:optimal":
        return np.array(OPTIMAL_CHSH_SETTINGS)
    if value.startswith("random:"):
        try:
            n = int(value.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad settings count in {value!r}") from None
        if n < 1 or (expect is not None and n != expect):
            raise UsageError(f"need {expect or 'at least 1'} settings pairs, got {n}")
        gen = RandomStream(seed).split(14).generator()
        pairs = np.stack([sample_uniform_sphere(gen, n), sample_uniform_sphere(gen, n)], axis=1)
        return pairs
    try:
        with open(value, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read settings file {value!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{value}: not valid JSON ({exc})") from exc
    pairs = np.asarray(raw, dtype=float)
    if pairs.ndim != 3 or pairs.shape[1:] != (2, 3):
        raise UsageError(f"{value}: expected a list of [a, b] 3-vector pairs")
    norms = np.linalg.norm(pairs, axis=2)
    if not np.all(np.abs(norms - 1.0) <= 1e-9):
        raise UsageError(f"{value}: settings must be unit vectors (worst |norm - 1| = "
                         f"{np.abs(norms - 1.0).max():.2e})")
    if expect is not None and len(pairs) != expect:
        raise UsageError(f"{value}: expected {expect} pairs, got {len(pairs)}")
    return pairs


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Commands


def cmd_validate(args) -> int:
    model = _load_model(args)
    seed = _resolve_seed(args.seed, model.spec.get("seed"))
    cfg = ValidatorConfig(
        n_settings=args.settings_n,
        n_lambda=args.lambda_n,
        exponent_lambda=args.lambda_n,
        mc_samples=args.mc_samples,
        threads=args.threads,
    )
    result = run_full_suite(model, cfg, seed=seed)
    _emit(result.to_json() + "\n", args.out)
    for r in result.reports:
        print(f"{r.constraint_id:20s} {r.status.value}", file=sys.stderr)
    print(f"overall: {result.overall} (exit {result.exit_code})", file=sys.stderr)
    return result.exit_code


def cmd_simulate(args) -> int:
    model = _load_model(args)
    seed = _resolve_seed(args.seed, model.spec.get("seed"))
    pairs = _parse_settings(args.settings, seed)
    cfg = ExperimentConfig(shots=args.shots, mode=args.mode, seed=seed, threads=args.threads)
    ests = run_experiment(model, pairs, cfg)
    buf = io.StringIO()
    write_correlations_csv(buf, ests)
    _emit(buf.getvalue(), args.out)
    return EX_OK


def cmd_chsh(args) -> int:
    model = _load_model(args)
    seed = _resolve_seed(args.seed, model.spec.get("seed"))
    pairs = _parse_settings(args.settings, seed, expect=4)
    cfg = ExperimentConfig(shots=args.shots, mode=args.mode, seed=seed, threads=args.threads)
    result = chsh(model, cfg, settings=pairs)
    buf = io.StringIO()
    write_chsh_csv(buf, result)
    _emit(buf.getvalue(), args.out)
    print(f"S = {result.s_est:.6f} +- {result.stderr:.6f} (quantum {result.s_qm:.6f})",
          file=sys.stderr)
    if args.witness:
        s_max, lam = find_chsh_witness(model, pairs, source=RandomStream(seed).split(15))
        print(f"max per-lambda S = {s_max:.6f} at lambda = {lam.to_jsonable()}",
              file=sys.stderr)
    return EX_OK


def cmd_scan(args) -> int:
    model = _load_model(args)
    seed = _resolve_seed(args.seed, model.spec.get("seed"))
    if args.points < 2:
        raise UsageError("--points must be at least 2")
    gen = RandomStream(seed).split(13).generator()
    if model.lambda_space.quadrature is not None:
        batch, w = model.lambda_space.quadrature
    else:
        batch = model.lambda_space.sample(gen, args.lambda_n)
        w = np.full(len(batch), 1.0 / len(batch))
    a = np.array([0.0, 0.0, 1.0])
    tangent = np.array([1.0, 0.0, 0.0])
    rows = []
    for x in np.linspace(-1.0, 1.0, args.points):
        b = x * a + np.sqrt(max(0.0, 1.0 - x * x)) * tangent
        b /= np.linalg.norm(b)
        tables, ok = model.tables_masked(batch, a, b)
        c, ok_c = model.implied_c(batch, a, b)
        mean_abs_c = float(np.sum(w[ok_c] * np.abs(c[ok_c])) / max(np.sum(w[ok_c]), 1e-300))
        rows.append([f"{x:.17g}", f"{mean_abs_c:.17g}",
                     f"{float(tables[ok].min()):.17g}", f"{float(tables[ok].max()):.17g}"])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["a_dot_b", "mean_abs_c", "min_entry", "max_entry"])
    writer.writerows(rows)
    _emit(buf.getvalue(), args.out)
    return EX_OK


def cmd_build_recipe(args) -> int:
    seed = _resolve_seed(args.seed, None)
    model = build_recipe_model(
        args.f, args.s, gamma=args.gamma, measure=args.scalar_measure,
        n_polar=args.grid_n, n_azimuth=2 * args.grid_n, seed=seed)
    out = args.out or f"recipe-{args.f}-s{args.s:g}.json"
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(model.spec, fh, indent=2, sort_keys=True)
        fh.write("\n")
    scale = model.spec["parameters"]["scale"]
    print(f"wrote {out} (scale {scale:.6g})", file=sys.stderr)
    return EX_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # our error() raises 64; --help/--version raise 0
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hvsinglet: error: {exc}", file=sys.stderr)
        return EX_USAGE
    except (ModelSpecError, GeometryError) as exc:
        print(f"hvsinglet: error: {exc}", file=sys.stderr)
        return EX_USAGE
    except OSError as exc:
        print(f"hvsinglet: error: {exc}", file=sys.stderr)
        return EX_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
