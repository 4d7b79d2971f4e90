"""Command-line experiment harness.

Every CSV starts with a ``#`` provenance line (version, seed, effective
flags) followed by a header row. Output paths and the worker count are not
part of the provenance, so runs that differ only in those produce identical
bytes.
"""

from __future__ import annotations

import argparse
import os
import sys
import traceback

import numpy as np

from . import __version__
from .analyze import bound_report, combined_bound
from .appinv import InversionConfig, curves_to_csv, inversion_experiment, summary_to_csv
from .errors import MatrixFormatError, SymmetryError, ThermiesError
from .experiments import (
    DEFAULT_EPSILONS,
    DEFAULT_M_DIMS,
    DEFAULT_M_VALUES,
    sweep_ensemble_draws,
    sweep_epsilon,
)
from .feaskit import feasibility_table
from .matio import data_path, load_matrix, store_csv
from .mitigate import MitigationPlan, thermies_repetition, thermies_sample
from .quantgrid import HARDWARE_DIAG_VALUES, HARDWARE_OFFDIAG_VALUES, QuantSpec, brackets, enumerate_ensemble
from .sampler import LangevinConfig, device_sample, sample_exact, sample_langevin
from .symcore import upper_indices

STOCHASTIC = {"sample", "sweep-eps", "sweep-m", "invert", "bounds"}
# checked after config defaults are applied, which argparse's required=True would ignore
REQUIRED = {
    "residual": ("matrix",),
    "weights": ("matrix",),
    "sample": ("matrix", "n"),
    "bounds": ("matrix",),
}
_NOT_PROVENANCE = {"output", "workers", "config", "summary", "command", "func"}
_CONFIG_ALIASES = {
    "quant.mode": "quant_mode",
    "quant.epsilon": "epsilon",
    "quant.diag_values": "diag_values",
    "quant.offdiag_values": "offdiag_values",
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in str(text).strip("[]() ").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).strip("[]() ").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text!r}")
    return v


def _add_common(p: argparse.ArgumentParser, stochastic: bool):
    p.add_argument("-o", "--output", default="-", help="output path, '-' for stdout")
    p.add_argument("--config", help="file of 'key = value' lines used as flag defaults")
    p.add_argument("--workers", type=_positive_int, default=1)
    if stochastic:
        p.add_argument("--seed", type=int, default=None, help="RNG seed (falls back to $THERMIES_SEED)")


def _add_quant(p: argparse.ArgumentParser, default_mode="uniform"):
    p.add_argument("--quant-mode", choices=("uniform", "grid"), default=default_mode)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--diag-values", type=_float_list, default=None)
    p.add_argument("--offdiag-values", type=_float_list, default=None)


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="thermies",
        description="Ensemble-sampling error mitigation experiments for imprecise Gaussian samplers.",
    )
    parser.add_argument("--version", action="version", version=f"thermies {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    subs = {}

    p = sub.add_parser("residual", help="residual matrix of a target")
    _add_common(p, False)
    p.add_argument("--matrix", help="matrix file (bare names also search the shipped data)")
    _add_quant(p)
    subs["residual"] = p

    p = sub.add_parser("weights", help="enumerate neighbors and their weights")
    _add_common(p, False)
    p.add_argument("--matrix", help="matrix file (bare names also search the shipped data)")
    _add_quant(p)
    subs["weights"] = p

    p = sub.add_parser("sample", help="draw samples (mitigated or not)")
    _add_common(p, True)
    p.add_argument("--matrix", help="matrix file (bare names also search the shipped data)")
    _add_quant(p)
    p.add_argument("--n", type=int, help="total number of samples N (required)")
    p.add_argument("--method", choices=("thermies", "repetition", "device", "exact"), default="thermies")
    p.add_argument("--device-mode", choices=("strict", "round_nearest"), default="round_nearest")
    p.add_argument("--ensemble-draws", type=_positive_int, default=None, help="M for --method repetition")
    p.add_argument("--samples-per-draw", type=_positive_int, default=None, help="n for --method repetition")
    p.add_argument("--backend", choices=("exact", "langevin"), default="exact")
    p.add_argument("--psd-policy", choices=("redraw", "clip", "error"), default="redraw")
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    subs["sample"] = p

    p = sub.add_parser("sweep-eps", help="L-infinity distance versus epsilon")
    _add_common(p, True)
    p.add_argument("--dims", type=_int_list, default=[1, 2, 3, 4])
    p.add_argument("--epsilons", type=_float_list, default=list(DEFAULT_EPSILONS))
    p.add_argument("--baseline", choices=("nearest", "floor"), default="nearest")
    p.add_argument("--random-points", type=_positive_int, default=100_000)
    subs["sweep-eps"] = p

    p = sub.add_parser("sweep-m", help="RMS error of the ensemble mean versus M")
    _add_common(p, True)
    p.add_argument("--dims", type=_int_list, default=list(DEFAULT_M_DIMS))
    p.add_argument("--m-values", type=_int_list, default=list(DEFAULT_M_VALUES))
    p.add_argument("--seeds", type=_positive_int, default=10)
    p.add_argument("--epsilon", type=float, default=1.0)
    subs["sweep-m"] = p

    p = sub.add_parser("invert", help="matrix inversion with and without mitigation")
    _add_common(p, True)
    p.add_argument("--matrix", default=None, help="matrix file (default: generated fixture)")
    p.add_argument("--fixture", type=int, default=0, help="shipped 8x8 fixture (0-9) used when --matrix is absent")
    _add_quant(p, default_mode="grid")
    p.add_argument("--ensemble-draws", type=_positive_int, default=4)
    p.add_argument("--total-samples", type=_positive_int, default=100_000)
    p.add_argument("--checkpoints", type=_int_list, default=None)
    p.add_argument("--repetitions", type=_positive_int, default=10)
    p.add_argument("--metric", choices=("relative", "absolute"), default="relative")
    p.add_argument("--psd-policy", choices=("redraw", "clip", "error"), default="redraw")
    p.add_argument("--summary", default=None, help="also write per-checkpoint mean/std here")
    subs["invert"] = p

    p = sub.add_parser("feasibility", help="largest feasible condition number per (d, bit depth)")
    _add_common(p, False)
    p.add_argument("--d-max", type=_positive_int, default=64)
    p.add_argument("--bit-depths", type=_int_list, default=[8, 16, 32])
    subs["feasibility"] = p

    p = sub.add_parser("bounds", help="Hoeffding and combined concentration bounds")
    _add_common(p, True)
    p.add_argument("--matrix", help="matrix file (bare names also search the shipped data)")
    _add_quant(p)
    p.add_argument("--ensemble-draws", type=_positive_int, default=100)
    p.add_argument("--total-samples", type=_positive_int, default=10_000)
    p.add_argument("--delta", type=float, default=0.1)
    subs["bounds"] = p

    return parser, subs


def read_config(path: str) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = _CONFIG_ALIASES.get(key, key).replace("-", "_").replace(".", "_")
            out[key] = value.strip("\"'")
    return out


def _quant(args) -> QuantSpec:
    if args.quant_mode == "grid":
        return QuantSpec.grid(args.diag_values or HARDWARE_DIAG_VALUES,
                              args.offdiag_values or HARDWARE_OFFDIAG_VALUES)
    if args.epsilon is None:
        raise UsageError("--epsilon is required for uniform quantization")
    if args.epsilon <= 0:
        raise UsageError("--epsilon must be positive")
    return QuantSpec.uniform(args.epsilon)


def provenance(args) -> str:
    items = []
    for key in sorted(vars(args)):
        if key in _NOT_PROVENANCE or key == "seed":
            continue
        v = getattr(args, key)
        if isinstance(v, (list, tuple)):
            v = ",".join(format(x, ".17g") if isinstance(x, float) else str(x) for x in v)
        items.append(f"{key}={v}")
    seed = getattr(args, "seed", None)
    return f"thermies {__version__} command={args.command} seed={seed} " + " ".join(items)


def _load(path: str):
    """Matrix file problems are input errors, reported as usage errors.

    A bare name that does not exist locally is looked up among the shipped
    matrices.
    """
    if not os.path.exists(path) and os.path.basename(path) == path and data_path(path).exists():
        path = str(data_path(path))
    try:
        return load_matrix(path)
    except FileNotFoundError:
        raise UsageError(f"matrix file not found: {path}") from None
    except (MatrixFormatError, SymmetryError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _fixture(index: int):
    name = f"inv8_{index:02d}.mat"
    try:
        return load_matrix(data_path(name))
    except FileNotFoundError:
        raise UsageError(f"no shipped fixture {name}") from None


def _write(args, header, rows):
    store_csv(args.output, header, rows, provenance(args))


def _cmd_residual(args):
    target = _load(args.matrix)
    spec = _quant(args)
    if not spec.is_uniform:
        raise UsageError("residual needs --quant-mode uniform")
    b = brackets(target, spec)
    rows = [
        (int(i), int(j), target.values[i, j], b.lo[i, j], b.w[i, j])
        for i, j in zip(*upper_indices(target.dim))
    ]
    _write(args, ["i", "j", "target", "floor", "residual"], rows)


def _cmd_weights(args):
    target = _load(args.matrix)
    ens = enumerate_ensemble(target, _quant(args))
    iu = upper_indices(target.dim)
    header = ["index", "bits", "weight"] + [f"s_{i}_{j}" for i, j in zip(*iu)]
    rows = [[m.index, m.label, m.weight, *m.matrix.values[iu]] for m in ens.members]
    _write(args, header, rows)


def _langevin(args, cov):
    if args.dt is None and args.burn_in is None and args.thin is None:
        return None
    base = LangevinConfig.default_for(cov)
    return LangevinConfig(
        dt=args.dt if args.dt is not None else base.dt,
        burn_in=args.burn_in if args.burn_in is not None else base.burn_in,
        thin=args.thin if args.thin is not None else base.thin,
    )


def _cmd_sample(args):
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    target = _load(args.matrix)
    spec = _quant(args)
    lcfg = _langevin(args, target)
    if args.method == "thermies":
        plan = MitigationPlan(target, spec, M=args.n, n=1, backend=args.backend,
                              psd_policy=args.psd_policy, langevin=lcfg)
        batch = thermies_sample(plan, args.n, args.seed)
    elif args.method == "repetition":
        M = args.ensemble_draws
        if M is None:
            raise UsageError("--method repetition needs --ensemble-draws")
        if args.n % M:
            raise UsageError("--n must be a multiple of --ensemble-draws")
        n = args.n // M
        if args.samples_per_draw is not None and args.samples_per_draw != n:
            raise UsageError("--samples-per-draw must equal --n / --ensemble-draws")
        plan = MitigationPlan(target, spec, M=M, n=n, backend=args.backend,
                              psd_policy=args.psd_policy, langevin=lcfg)
        batch, _ = thermies_repetition(plan, args.seed)
    elif args.method == "device":
        batch = device_sample(target, spec, args.n, mode=args.device_mode,
                              backend=args.backend, rng=args.seed, langevin=lcfg)
    else:
        if args.backend == "langevin":
            batch = sample_langevin(target, args.n, lcfg, args.seed)
        else:
            batch = sample_exact(target, args.n, args.seed)
    if args.format == "bin":
        raw = batch.to_bytes()
        if args.output == "-":
            sys.stdout.buffer.write(raw)
            sys.stdout.flush()
        else:
            with open(args.output, "wb") as fh:
                fh.write(raw)
        return
    text = "# " + provenance(args) + "\n" + batch.to_csv()
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _cmd_sweep_eps(args):
    rows = sweep_epsilon(args.dims, args.epsilons, args.seed, args.baseline,
                         args.random_points, args.workers)
    _write(args, ["dim", "epsilon", "mitigated", "linf"], rows)


def _cmd_sweep_m(args):
    rows = sweep_ensemble_draws(args.dims, args.m_values, args.seeds, args.seed,
                                args.epsilon, args.workers)
    _write(args, ["dim", "M", "mean_rms", "std_rms"], rows)


def _cmd_invert(args):
    A = _load(args.matrix) if args.matrix else _fixture(args.fixture)
    if args.quant_mode == "uniform" and args.epsilon is None:
        raise UsageError("--epsilon is required for uniform quantization")
    cfg = InversionConfig(
        matrix=A,
        spec=_quant(args),
        M=args.ensemble_draws,
        total_samples=args.total_samples,
        checkpoints=tuple(args.checkpoints or ()),
        repetitions=args.repetitions,
        seed=args.seed,
        metric=args.metric,
        psd_policy=args.psd_policy,
    )
    mit, unmit = inversion_experiment(cfg, workers=args.workers)
    prov = "# " + provenance(args) + "\n"
    for path, text in ((args.output, curves_to_csv(mit, unmit)), (args.summary, summary_to_csv(mit, unmit))):
        if path is None:
            continue
        if path == "-":
            sys.stdout.write(prov + text)
        else:
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(prov + text)


def _cmd_feasibility(args):
    if any(xi < 3 for xi in args.bit_depths):
        raise UsageError("bit depths must be >= 3")
    _write(args, ["d", "xi", "kappa_max"], feasibility_table(args.d_max, args.bit_depths))


def _cmd_bounds(args):
    target = _load(args.matrix)
    spec = _quant(args)
    if not spec.is_uniform:
        raise UsageError("bounds need --quant-mode uniform")
    from .quantgrid import draw_neighbors

    gen = np.random.default_rng(args.seed)
    _, mats = draw_neighbors(target, spec, args.ensemble_draws, gen)
    rep = bound_report(mats, args.total_samples, args.delta, spec.epsilon)
    mean = np.mean([m.values for m in mats], axis=0)
    rows = []
    for i, j in zip(*upper_indices(target.dim)):
        s = float(rep.sbar.values[i, j])
        rows.append((
            int(i), int(j), rep.delta, rep.M, rep.N, rep.epsilon, s, rep.hoeffding_prob,
            combined_bound(rep.N, rep.M, rep.delta, rep.epsilon, s),
            abs(mean[i, j] - target.values[i, j]),
        ))
    _write(args, ["i", "j", "delta", "M", "N", "epsilon", "sbar", "hoeffding_prob",
                  "combined_lower", "abs_dev"], rows)


COMMANDS = {
    "residual": _cmd_residual,
    "weights": _cmd_weights,
    "sample": _cmd_sample,
    "sweep-eps": _cmd_sweep_eps,
    "sweep-m": _cmd_sweep_m,
    "invert": _cmd_invert,
    "feasibility": _cmd_feasibility,
    "bounds": _cmd_bounds,
}


def _failing_operation(exc: BaseException) -> str:
    """module.function of the innermost library frame that raised."""
    pkg = os.path.dirname(os.path.abspath(__file__))
    name = "cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        if os.path.dirname(os.path.abspath(frame.filename)) == pkg:
            mod = os.path.splitext(os.path.basename(frame.filename))[0]
            name = f"{mod}.{frame.name}"
    return name


def run(argv=None) -> int:
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    sub = subs[args.command]
    try:
        if args.config:
            cfg = read_config(args.config)
            known = {a.dest for a in sub._actions}
            unknown = sorted(set(cfg) - known)
            if unknown:
                raise UsageError(f"unknown config keys: {', '.join(unknown)}")
            sub.set_defaults(**cfg)
            try:
                args = parser.parse_args(argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        missing = [f"--{k}" for k in REQUIRED.get(args.command, ()) if getattr(args, k) is None]
        if missing:
            raise UsageError(f"the following arguments are required: {', '.join(missing)}")
        if args.command in STOCHASTIC and args.seed is None:
            env = os.environ.get("THERMIES_SEED")
            if env is None:
                raise UsageError("a seed is required: pass --seed or set THERMIES_SEED")
            try:
                args.seed = int(env)
            except ValueError:
                raise UsageError(f"THERMIES_SEED must be an integer, got {env!r}") from None
        COMMANDS[args.command](args)
    except (UsageError, OSError) as exc:
        if isinstance(exc, OSError) and not isinstance(exc, FileNotFoundError):
            print(f"thermies: io error: {exc}", file=sys.stderr)
            return 1
        sub.print_usage(sys.stderr)
        print(f"thermies {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ThermiesError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"thermies: error in {_failing_operation(exc)}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
