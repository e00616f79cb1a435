"""Command-line front end: equivalence, simulate, fit, eb, heavytail, pit.

Exit codes are a stable contract: 0 success, 1 domain/numeric error, 2 usage
error. Every stochastic subcommand requires --seed; identical seeds and flags
produce byte-identical output. All numbers are serialized with 17 significant
digits so byte-level reproducibility is meaningful.

Note: option values starting with '-' (e.g. a negative alpha grid) must use
the '--flag=value' form, as in ``--alpha-grid=-1,0,1``.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from unobs_lab import equivalence as eq
from unobs_lab import estimation as est
from unobs_lab import heavytail as ht
from unobs_lab.model_core import (
    CSParams,
    DomainError,
    format_float,
    read_dataset_csv,
    write_dataset_csv,
)

__all__ = ["main", "entry"]


# ---------------------------------------------------------------------------
# Serialization helpers
# ---------------------------------------------------------------------------


def _json(obj) -> str:
    """Deterministic JSON with floats at 17 significant digits."""
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj)
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{_json(k)}: {_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def _write(path, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _k_range(text: str) -> list[int]:
    """Parse moment orders: '3', '1,2,4', or '1..4'."""
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a k range: {text!r}")


def _threads() -> int:
    raw = os.environ.get("UNOBS_LAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise DomainError(f"UNOBS_LAB_THREADS must be an integer >= 1, got {raw!r}")
    if n < 1:
        raise DomainError(f"UNOBS_LAB_THREADS must be >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def _equivalence_record(lambda2: float, nu2: float, alpha: float, n: int) -> dict:
    spec = eq.ExtendedSpec(lambda2=lambda2, nu2=nu2, alpha=alpha)
    d, tau = spec.d, spec.tau
    var_row, cov_row = eq.decomposition_table(lambda2, nu2, alpha)
    marg = eq.marginal_cov_extended(spec, n)
    return {
        "lambda2": lambda2,
        "nu2": nu2,
        "alpha": alpha,
        "d": d,
        "tau": tau,
        "slack": eq.psd_slack(spec),
        "shrinkage": eb_or_none(spec, n),
        "marginal_cov": list(marg.array.ravel()),
        "decomposition": {
            "variance": {
                "sigma2": var_row.sigma2_part,
                "d": var_row.d_part,
                "two_tau": var_row.two_tau_part,
                "total": var_row.total,
            },
            "covariance": {
                "sigma2": cov_row.sigma2_part,
                "d": cov_row.d_part,
                "two_tau": cov_row.two_tau_part,
                "total": cov_row.total,
            },
        },
    }


def eb_or_none(spec: eq.ExtendedSpec, n: int) -> float:
    return eq.eb_shrinkage(spec, n)


def _cmd_equivalence(args) -> int:
    records = [
        _equivalence_record(args.lambda2, args.nu2, alpha, args.n)
        for alpha in args.alpha_grid
    ]
    _write(args.out, _json(records) + "\n")
    return 0


def _cmd_eb(args) -> int:
    spec = eq.ExtendedSpec(lambda2=args.lambda2, nu2=args.nu2, alpha=args.alpha)
    record = {
        "lambda2": args.lambda2,
        "nu2": args.nu2,
        "alpha": args.alpha,
        "n": args.n,
        "d": spec.d,
        "tau": spec.tau,
        "shrinkage": eq.eb_shrinkage(spec, args.n),
    }
    _write(args.out, _json(record) + "\n")
    return 0


def _fit_record(result: est.FitResult) -> dict:
    return {
        "xi": list(result.params.xi),
        "lambda": result.params.lam,
        "phi": result.params.phi,
        "loglik": result.loglik,
        "converged": result.converged,
        "iterations": result.iterations,
        "constraint_active": result.constraint_active,
    }


def _cmd_fit(args) -> int:
    data = read_dataset_csv(args.data)
    result = est.fit_ml(data)
    _write(args.out, _json(_fit_record(result)) + "\n")
    return 0


def _cmd_simulate(args) -> int:
    layout = est.SimLayout(n_clusters=args.n_clusters, cluster_size=args.cluster_size)
    threads = _threads()
    if args.model == "cs":
        params = CSParams(xi=np.array(args.xi), lam=args.lam, phi=args.phi)
        data = est.simulate_cs(params, layout, seed=args.seed, threads=threads)
        latents = None
    else:
        spec = eq.ExtendedSpec(lambda2=args.lambda2, nu2=args.nu2, alpha=args.alpha)
        data, latents = est.simulate_extended(
            spec, np.array(args.xi), layout, seed=args.seed, threads=threads
        )
    if args.out is None or args.out == "-":
        import io

        buf = io.StringIO()
        _write_csv_to(data, buf)
        sys.stdout.write(buf.getvalue())
    else:
        write_dataset_csv(data, args.out)
    if args.latent is not None:
        if latents is None:
            raise DomainError("--latent requires --model extended")
        n_max = max(layout.sizes())
        with open(args.latent, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("cluster,b," + ",".join(f"eps{j + 1}" for j in range(n_max)) + "\n")
            for c, (b, eps) in zip(data.clusters, latents):
                cells = [c.cluster_id, format_float(b)]
                cells += [format_float(e) for e in eps]
                cells += [""] * (n_max - len(eps))
                fh.write(",".join(cells) + "\n")
    return 0


def _write_csv_to(data, fh) -> None:
    fh.write("cluster,unit,y," + ",".join(data.covariate_names) + "\n")
    for c in data.clusters:
        for j in range(c.n):
            cells = [c.cluster_id, str(j + 1), format_float(c.y[j])]
            cells += [format_float(v) for v in c.X[j]]
            fh.write(",".join(cells) + "\n")


def _cmd_heavytail(args) -> int:
    spec = ht.WeibullExpSpec(phi=args.phi, rho=args.rho, delta=args.delta)
    if args.action == "moments":
        records = []
        for k in args.k:
            m = ht.we_moment(spec, k)
            records.append(
                {
                    "k": m.k,
                    "formula_defined": m.formula_defined,
                    "integral_finite": m.integral_finite,
                    "value": m.value,
                }
            )
        _write(args.out, _json(records) + "\n")
    elif args.action == "sample":
        draws = ht.we_sample(spec, args.n, seed=args.seed)
        _write(args.out, "".join(format_float(v) + "\n" for v in draws))
    else:  # trace
        trace = ht.running_mean_trace(spec, N=args.n, stride=args.stride, seed=args.seed)
        lines = ["n,running_mean\n"]
        lines += [f"{n},{format_float(m)}\n" for n, m in trace]
        _write(args.out, "".join(lines))
    return 0


def _cmd_pit(args) -> int:
    spec = ht.WeibullExpSpec(phi=args.phi, rho=args.rho, delta=args.delta)
    draws = ht.pit_sample(lambda u: ht.we_quantile(spec, u), args.n, seed=args.seed)
    _write(args.out, "".join(format_float(v) + "\n" for v in draws))
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unobs-lab",
        description="Compound-symmetry equivalence classes and heavy-tailed frailty laws",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("equivalence", help="alpha-grid report of the extended family")
    p.add_argument("--lambda2", type=float, required=True)
    p.add_argument("--nu2", type=float, required=True)
    p.add_argument("--alpha-grid", type=_float_list, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_equivalence)

    p = sub.add_parser("eb", help="empirical-Bayes shrinkage at one alpha")
    p.add_argument("--lambda2", type=float, required=True)
    p.add_argument("--nu2", type=float, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eb)

    p = sub.add_parser("fit", help="ML fit of the compound-symmetry model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("simulate", help="simulate clustered data (CSV long format)")
    p.add_argument("--model", choices=["cs", "extended"], default="cs")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--phi", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--nu2", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--xi", type=_float_list, default=[0.0])
    p.add_argument("--n-clusters", type=int, required=True)
    p.add_argument("--cluster-size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--latent", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("heavytail", help="Weibull-exponential moments/samples/traces")
    p.add_argument("action", choices=["moments", "sample", "trace"])
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--k", type=_k_range, default=[1])
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_heavytail)

    p = sub.add_parser("pit", help="probability-integral-transform sampler")
    p.add_argument("--dist", choices=["weibull-exp"], default="weibull-exp")
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_pit)

    return parser


def _check_stochastic_flags(parser: argparse.ArgumentParser, args) -> None:
    if args.subcommand == "heavytail" and args.action in ("sample", "trace"):
        if args.seed is None:
            parser.error("--seed is required for stochastic subcommands")
        if args.n is None:
            parser.error("--n is required for sample/trace")
    if args.subcommand == "simulate":
        if args.model == "cs" and (args.lam is None or args.phi is None):
            parser.error("--model cs requires --lambda and --phi")
        if args.model == "extended" and (
            args.lambda2 is None or args.nu2 is None or args.alpha is None
        ):
            parser.error("--model extended requires --lambda2, --nu2, --alpha")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        _check_stochastic_flags(parser, args)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    except (
        DomainError,
        ValueError,
        ArithmeticError,
        RuntimeError,
        OSError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
