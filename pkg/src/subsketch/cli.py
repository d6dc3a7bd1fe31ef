"""Command-line experiment driver.

Every subcommand takes ``--seed`` and writes one record (JSON, or CSV for
``spectrum``) to standard output or ``--out``.  Records are deterministic in
their parameters apart from the ``wall_clock`` field.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, hardinstance, median2d, sketches, spectrum, tukey
from .core import RngStream, condition_number, log_abs, power, write_matrix, zero_indicator

SCHEMA = 1
MAX_D = 20


class UsageError(Exception):
    """A flag value outside its allowed range."""


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _kernel(args):
    if args.kernel == "power":
        return power(args.p)
    return zero_indicator() if args.kernel == "zero" else log_abs()


def cmd_spectrum(args):
    if not 1 <= args.d <= 24:
        raise UsageError("--d must be in [1, 24]")
    k = _kernel(args)
    spec = spectrum.fourier_spectrum(k, args.d, method=args.method)
    rows = [
        {
            "d": args.d,
            "kernel": k.tag,
            "p": k.p if k.tag == "power" else "",
            "weight": w,
            "coefficient": float(spec.by_weight[w]),
            "multiplicity": math.comb(args.d, w),
        }
        for w in range(args.d + 1)
    ]
    if args.format == "csv":
        return rows
    out = {"rows": rows, "lambda0": spec.lambda0, "lambda0_multiplicity": spec.multiplicity}
    if args.d % 2 == 0:
        routes = {"alternating_sum": float(spectrum.lambda0_alternating_sum(k, args.d))}
        routes["wht"] = float(spectrum.fourier_spectrum(k, args.d, method="wht").by_weight[args.d // 2])
        if k.tag == "power" and args.d % 4 == 0 and args.p < args.d / 2:
            routes["integral"] = spectrum.lambda0_integral(args.p, args.d)
        out["lambda0_routes"] = routes
    if args.dense_check:
        if args.d > 12:
            raise UsageError("--dense-check needs --d <= 12")
        dense = np.sort(np.linalg.eigvalsh(spectrum.dense_kernel_matrix(k, args.d)))
        fast = np.sort(spec.eigenvalues())
        scale = max(float(np.max(np.abs(dense))), 1e-300)
        out["dense_max_rel_err"] = float(np.max(np.abs(dense - fast)) / scale)
    return out


def _check_cube(args):
    if args.d % 2 or not 8 <= args.d <= MAX_D:
        raise UsageError(f"--d must be even and in [8, {MAX_D}]")
    if args.p <= 0:
        raise UsageError("--p must be positive")


def cmd_hard_instance(args):
    stream = RngStream(args.seed, "hard-instance")
    if args.distinguish:
        if args.p < 2 or args.d < 8:
            raise UsageError("--distinguish needs --p >= 2 and --d >= 8")
        reps = []
        for t in range(args.trials):
            s = hardinstance.distinguishing_experiment(args.d, args.p, args.rows, stream.child(t))
            reps.append({k: getattr(s, k) for k in ("rows", "coherence", "planted", "foreign", "foreign_bound", "gap", "separated")})
        return {
            "d": args.d,
            "p": args.p,
            "trials": args.trials,
            "separated": sum(r["separated"] for r in reps),
            "min_gap": min(r["gap"] for r in reps),
            "per_trial": reps,
        }
    _check_cube(args)
    inst = hardinstance.build_hard_instance(args.d, args.p, stream)
    inv = hardinstance.check_invariants(inst, all_queries=args.d <= 12)
    answers = inst.exact_answers()
    guesses = [hardinstance.recover_bit(a, inst, i) for a, i in zip(answers, inst.indices)]
    rate = float(np.mean(np.array(guesses) == inst.signs)) if len(guesses) else math.nan
    if args.matrix_out:
        write_matrix(inst.A, args.matrix_out)
    return {
        "d": args.d,
        "p": args.p,
        "noise_model": "exact",
        "trials": 1,
        "bits": len(inst.indices),
        "per_bit_success_rate": rate,
        "lambda0": inst.lambda0,
        "multiplicity": inst.multiplicity,
        "kappa": condition_number(inst.A),
        "grain": inst.grain,
        "entry_bits": inst.A.entry_bits(),
        "resamples": inst.resamples,
        "invariants": inv,
        "all_queries_checked": args.d <= 12,
    }


def cmd_recover(args):
    _check_cube(args)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.noise == "exact":
        noise = hardinstance.NoiseModel()
    elif args.noise == "additive":
        mag = args.magnitude if args.magnitude is not None else hardinstance.decoder_noise_threshold(args.d, args.p)
        noise = hardinstance.NoiseModel("additive", mag)
    else:
        eps = args.magnitude if args.magnitude is not None else hardinstance.multiplicative_eps_for(args.d, args.p, args.factor)
        noise = hardinstance.NoiseModel("multiplicative", eps)
    return hardinstance.recovery_experiment(args.d, args.p, noise, args.trials, RngStream(args.seed, "recover"))


def _check_sketch_args(args):
    if args.n < 1 or args.d < 1 or args.trials < 1:
        raise UsageError("--n, --d and --trials must be >= 1")
    if not 0 < args.eps < 1:
        raise UsageError("--eps must lie in (0, 1)")
    if args.sketch == "even" and args.p not in (2, 4, 6):
        raise UsageError("--sketch even needs --p in {2, 4, 6}")
    if args.sketch == "stable" and not 0 < args.p <= 2:
        raise UsageError("--sketch stable needs 0 < --p <= 2")
    if args.sketch == "sampling" and not 0 < args.p < 4:
        raise UsageError("--sketch sampling needs 0 < --p < 4")


def cmd_sketch_bench(args):
    if args.sketch == "gram":
        args.p = 2.0
    _check_sketch_args(args)
    root = RngStream(args.seed, "sketch-bench")
    A = root.sub("matrix").generator().standard_normal((args.n, args.d))
    params = {"p": args.p, "eps": args.eps, "n": args.n, "d": args.d, "trials": args.trials}
    extra = {}
    weights = None
    if args.sketch == "sampling":
        weights = sketches.compute_lewis_weights(A, args.p)
        m = args.rows or math.ceil(args.d * math.log(args.d + 1) / args.eps**2)
        params["rows"] = m
        lev = np.einsum("ij,ji->i", A, np.linalg.pinv(A))
        extra["lewis"] = {
            "iterations": weights.iterations,
            "residual": weights.residual,
            "sum_minus_d": float(weights.w.sum() - args.d),
            "max_dev_from_leverage": float(np.max(np.abs(weights.w - lev))) if args.p == 2 else None,
        }
    if args.sketch == "stable":
        params["row_constant"] = args.row_constant

    def build(t):
        gen = root.child(t).generator()
        if args.sketch == "gram":
            return sketches.build_gram_sketch(A), gen
        if args.sketch == "even":
            return sketches.build_even_moment_sketch(A, int(args.p)), gen
        if args.sketch == "stable":
            return sketches.build_stable_sketch(A, args.p, args.eps, gen, args.row_constant), gen
        return sketches.build_sampling_sketch(A, args.p, m, gen, weights), gen

    errs = []
    size = None
    for t in range(args.trials):
        sk, gen = build(t)
        size = sk.size_bits()
        x = gen.standard_normal(args.d)
        exact = float(np.sum(np.abs(A @ x) ** args.p))
        errs.append(abs(sk.query(x) - exact) / exact)
    errs = np.array(errs)
    return {
        "sketch": args.sketch,
        "params": params,
        "size_bits": size,
        "coverage_rate": float(np.mean(errs <= args.eps)),
        "mean_rel_err": float(errs.mean()),
        "max_rel_err": float(errs.max()),
        **extra,
    }


def cmd_tukey_bench(args):
    if args.n < 1 or args.trials < 1 or args.spikes < 0 or args.spikes > args.n:
        raise UsageError("need --n >= 1, --trials >= 1 and 0 <= --spikes <= --n")
    if args.tau <= 0 or not 0 < args.eps < 0.5:
        raise UsageError("need --tau > 0 and 0 < --eps < 1/2")
    root = RngStream(args.seed, "tukey-bench")
    x = tukey.mixed_vector(args.n, args.tau, args.spikes, root.sub("vector"))
    runs = [tukey.run_tukey_pipeline(x, args.tau, args.eps, root.child(t)) for t in range(args.trials)]
    per_trial = [
        {"estimate": r.estimate, "rel_err": r.rel_err, "r": r.r, "S1": r.S1, "S2": r.S2, "S3": r.S3, "sample_size": r.sample_size}
        for r in runs
    ]
    first = runs[0]
    return {
        "exact": first.exact,
        "estimate": float(np.median([r.estimate for r in runs])),
        "rel_err": float(np.median([r.rel_err for r in runs])),
        "r": first.r,
        "beta": first.beta,
        "degree": first.degree,
        "S1": float(np.mean([r.S1 for r in runs])),
        "S2": float(np.mean([r.S2 for r in runs])),
        "S3": float(np.mean([r.S3 for r in runs])),
        "within_3eps_rate": float(np.mean([r.rel_err <= 3 * args.eps for r in runs])),
        "oracle_assisted": first.oracle_assisted,
        "per_trial": per_trial,
    }


def cmd_median2d_bench(args):
    if args.n < 2 or args.grid < 1 or not 0 < args.eps < 1:
        raise UsageError("need --n >= 2, --grid >= 1 and 0 < --eps < 1")
    gen = RngStream(args.seed, "median2d-bench").generator()
    A = gen.standard_normal((args.n, 2))
    sk = median2d.build_l1_2d_sketch(A, args.eps)
    theta = np.linspace(0.0, math.pi, args.grid, endpoint=False)
    X = np.column_stack([np.cos(theta), np.sin(theta)])
    exact = np.abs(A @ X.T).sum(axis=0)
    est = np.array([sk.query(x) for x in X])
    return {
        "n": args.n,
        "eps": args.eps,
        "coreset_size_plus": sk.plus.size,
        "coreset_size_minus": sk.minus.size,
        "max_rel_err": float(np.max(np.abs(est / exact - 1.0))),
        "K_observed": median2d.size_constant(max(sk.plus.size, sk.minus.size), args.n, args.eps),
    }


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="subsketch", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, fmt=("json",)):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--format", choices=fmt, default=fmt[0])

    sp = sub.add_parser("spectrum", help="eigenvalues of a cube kernel matrix by weight")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--p", type=float, default=1.0)
    sp.add_argument("--kernel", choices=("power", "zero", "log"), default="power")
    sp.add_argument("--method", choices=("krawtchouk", "wht"), default="krawtchouk")
    sp.add_argument("--dense-check", action="store_true")
    common(sp, ("csv", "json"))
    sp.set_defaults(func=cmd_spectrum)

    sp = sub.add_parser("hard-instance", help="build one instance and audit it")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--matrix-out", type=Path)
    sp.add_argument("--distinguish", action="store_true", help="run the incoherent-set separation instead")
    sp.add_argument("--rows", type=int, default=None)
    sp.add_argument("--trials", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_hard_instance)

    sp = sub.add_parser("recover", help="sign-recovery rate under a noise model")
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--noise", choices=("exact", "additive", "multiplicative"), default="exact")
    sp.add_argument("--magnitude", type=float, default=None)
    sp.add_argument("--factor", type=float, default=100.0)
    sp.add_argument("--trials", type=int, default=200)
    common(sp)
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("sketch-bench", help="accuracy and size of a subspace sketch")
    sp.add_argument("--sketch", choices=("gram", "even", "stable", "sampling"), required=True)
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--eps", type=float, default=0.2)
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--d", type=int, default=5)
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--rows", type=int, default=None)
    sp.add_argument("--row-constant", type=float, default=sketches.STABLE_ROW_CONSTANT)
    common(sp)
    sp.set_defaults(func=cmd_sketch_bench)

    sp = sub.add_parser("tukey-bench", help="mollified Tukey estimator against the exact scan")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--tau", type=float, default=1.0)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--spikes", type=int, default=1000)
    sp.add_argument("--trials", type=int, default=10)
    common(sp)
    sp.set_defaults(func=cmd_tukey_bench)

    sp = sub.add_parser("median2d-bench", help="two-column l1 sketch on random directions")
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--grid", type=int, default=1000)
    common(sp)
    sp.set_defaults(func=cmd_median2d_bench)
    return parser


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _render(args, payload, elapsed) -> str:
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(payload[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(payload)
        return buf.getvalue()
    params = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k not in ("func", "out", "format", "command", "seed")}
    record = {
        "schema": SCHEMA,
        "subcommand": args.command,
        "version": __version__,
        "seed": args.seed,
        "parameters": params,
        **payload,
        "wall_clock": elapsed,
    }
    return json.dumps(_to_jsonable(record), indent=2, sort_keys=False) + "\n"


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        payload = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1
    text = _render(args, payload, time.perf_counter() - start)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
