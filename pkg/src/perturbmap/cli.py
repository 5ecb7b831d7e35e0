"""Command-line harness: model generation, inference, sampling, experiments.

Every randomized subcommand requires an explicit seed (--seed or the
PERTURBMAP_SEED environment variable); outputs are byte-identical across
reruns with the same flags.  Exit codes: 0 ok, 2 validation error, 3
state-space or expansion cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__, baselines, bounds, exact, mapsolve, samplers
from .model import (
    InvalidModelError,
    PairwiseModel,
    SpinGlassConfig,
    StateSpaceTooLargeError,
    from_json,
    generate_spin_glass,
    to_json,
)
from .perturbation import Scheme, SeedPath

SEED_ENV = "PERTURBMAP_SEED"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CAP = 3


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    raise InvalidModelError(f"a seed is required: pass --seed or set {SEED_ENV}")


def _load_model(path: str) -> PairwiseModel:
    try:
        with open(path) as fh:
            return from_json(fh.read())
    except OSError as exc:
        raise InvalidModelError(f"cannot read model file {path}: {exc}") from exc


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w"), True


def _emit(path, text: str) -> None:
    fh, close = _open_out(path)
    fh.write(text)
    if not text.endswith("\n"):
        fh.write("\n")
    if close:
        fh.close()


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v != ""]


def _parse_pair(text: str) -> tuple[int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 2:
        raise InvalidModelError(f"expected 'i,j', got {text!r}")
    return parts[0], parts[1]


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_gen_model(args) -> int:
    cfg = SpinGlassConfig(
        args.rows, args.cols, args.field_range, args.coupling, _resolve_seed(args)
    )
    _emit(args.out, to_json(generate_spin_glass(cfg)))
    return EXIT_OK


def cmd_exact(args) -> int:
    model = _load_model(args.model)
    payload = {"log_z": exact.log_partition(model, args.max_states)}
    if args.marginal:
        subset = tuple(int(v) for v in args.marginal.split(","))
        table = exact.marginal(model, subset, args.max_states)
        payload["marginal"] = {"subset": list(table.subset), "probs": table.probs.tolist()}
    _emit(args.out, json.dumps(payload))
    return EXIT_OK


def cmd_map(args) -> int:
    model = _load_model(args.model)
    result = mapsolve.solve_map(model, args.strategy, args.max_states)
    payload = {
        "assignment": result.argmax.tolist(),
        "value": result.value,
        "solver": result.solver,
        "ties_possible": result.ties_possible,
    }
    _emit(args.out, json.dumps(payload))
    return EXIT_OK


def _write_jsonl(path, header: dict, samples: np.ndarray) -> None:
    fh, close = _open_out(path)
    fh.write(json.dumps(header) + "\n")
    for row in samples.tolist():
        fh.write(json.dumps(row) + "\n")
    if close:
        fh.close()


def cmd_sample(args) -> int:
    model = _load_model(args.model)
    root = SeedPath(_resolve_seed(args))
    header = {
        "sampler": args.sampler,
        "seed": root.root_seed,
        "draws": args.draws,
        "model": args.model,
    }
    if args.sampler == "gumbel-full":
        batch = samplers.gumbel_max_batch(model, args.draws, root, args.max_states)
    elif args.sampler == "approx-unary":
        batch = samplers.approx_map_batch(
            model, Scheme.UNARY, args.draws, root, max_states=args.max_states
        )
    elif args.sampler == "approx-pairwise":
        if args.m_replicas > 1:
            anchor = _parse_pair(args.anchor) if args.anchor else model.edges[0]
            batch = samplers.approx_pair_batch(
                model, anchor, args.m_replicas, args.draws, root,
                max_states=args.max_states,
            )
            header["anchor"] = list(anchor)
            header["m_replicas"] = args.m_replicas
        else:
            batch = samplers.approx_map_batch(
                model, Scheme.PAIRWISE, args.draws, root, max_states=args.max_states
            )
    elif args.sampler == "unbiased":
        family = samplers.make_bound_family(
            model,
            kind=args.family,
            mc_samples=args.mc_samples if args.family == "gumbel-mc" else None,
            seed=root.child(0) if args.family == "gumbel-mc" else None,
            max_states=args.max_states,
        )
        batch = samplers.unbiased_batch(
            model, family, args.draws, root.child(1), args.max_restarts
        )
        header["family"] = args.family
        header["mc_samples"] = args.mc_samples
        header["restarts"] = batch.restarts
    else:
        raise InvalidModelError(f"unknown sampler {args.sampler}")
    header["wall_time"] = round(batch.wall_time, 6)
    _write_jsonl(args.out, header, batch.samples)
    return EXIT_OK


def cmd_baseline(args) -> int:
    model = _load_model(args.model)
    root = _resolve_seed(args)
    cfg = baselines.ChainConfig(
        sweeps=args.sweeps, burn_in=args.burn_in, thin=args.thin,
        init=args.init, scan=args.scan,
    )
    rng = SeedPath(root).generator()
    if args.sampler == "gibbs":
        batch = baselines.gibbs_chain(model, cfg, rng)
    elif args.sampler == "metropolis":
        batch = baselines.metropolis_chain(model, cfg, rng)
    else:
        raise InvalidModelError(f"unknown baseline sampler {args.sampler}")
    header = {
        "sampler": batch.sampler,
        "seed": root,
        "sweeps": args.sweeps,
        "burn_in": cfg.resolved_burn_in(),
        "thin": args.thin,
        "model": args.model,
        "wall_time": round(batch.wall_time, 6),
    }
    _write_jsonl(args.out, header, batch.samples)
    return EXIT_OK


BOUNDS_HEADER = [
    "c", "seed", "exact_logz", "upper", "upper_se",
    "lower_exp", "lower_exp_se", "lower_prob", "accept_proxy",
]


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # shortest round-trip, byte-stable
    return str(value)


def _write_csv(path, header: list[str], rows: list[dict]) -> None:
    fh, close = _open_out(path)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(row[k]) for k in header])
    if close:
        fh.close()


def cmd_bounds(args) -> int:
    root = _resolve_seed(args)
    grid = _parse_floats(args.coupling_grid)
    which = args.bound
    rows = bounds.bounds_report(
        args.rows, args.cols, grid, args.seeds, args.mc_samples, args.replicas,
        SeedPath(root), args.field_range, args.max_states,
    )
    if which != "all":
        keep = {
            "upper": ["c", "seed", "exact_logz", "upper", "upper_se"],
            "lower-expected": ["c", "seed", "exact_logz", "lower_exp", "lower_exp_se"],
            "lower-probable": ["c", "seed", "exact_logz", "lower_prob"],
        }[which]
        _write_csv(args.out, keep, [{k: r[k] for k in keep} for r in rows])
    else:
        _write_csv(args.out, BOUNDS_HEADER, rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Experiments.

@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str  # lower-bounds | marginal-error | acceptance
    rows: int
    cols: int
    grid_sizes: tuple[str, ...]
    coupling_grid: tuple[float, ...]
    seeds: int
    draws: int
    mc_samples: int
    replicas: int
    field_range: float
    root_seed: int
    out: str


MARGINAL_HEADER = ["c", "method", "mean_tv", "std_error", "draws", "seeds"]
ACCEPT_HEADER = ["grid", "c", "seed", "accept_rate", "accept_se", "accept_proxy"]


def _mean_vertex_tv(model: PairwiseModel, samples: np.ndarray, oracle) -> float:
    tvs = []
    for i, om in enumerate(oracle):
        emp = exact.empirical_marginal(samples, (i,), model.domain_sizes)
        tvs.append(exact.total_variation(emp, om))
    return float(np.mean(tvs))


def _marginal_error_rows(spec: ExperimentSpec) -> list[dict]:
    root = SeedPath(spec.root_seed)
    rows = []
    cell = 0
    for c in spec.coupling_grid:
        per_method: dict[str, list[float]] = {m: [] for m in
                                              ("approx-unary", "approx-pairwise", "gibbs-chain")}
        for model_seed in range(spec.seeds):
            cfg = SpinGlassConfig(spec.rows, spec.cols, spec.field_range, float(c), model_seed)
            model = generate_spin_glass(cfg)
            oracle = exact.vertex_marginals(model)
            path = root.child(cell)
            cell += 1
            uni = samplers.approx_map_batch(model, Scheme.UNARY, spec.draws, path.child(0))
            per_method["approx-unary"].append(_mean_vertex_tv(model, uni.samples, oracle))
            pw = samplers.approx_map_batch(model, Scheme.PAIRWISE, spec.draws, path.child(1))
            per_method["approx-pairwise"].append(_mean_vertex_tv(model, pw.samples, oracle))
            sweeps = max(spec.draws + spec.draws // 9 + 1, 10)
            chain_cfg = baselines.ChainConfig(sweeps=sweeps)
            chain = baselines.gibbs_chain(model, chain_cfg, path.child(2).generator())
            per_method["gibbs-chain"].append(
                _mean_vertex_tv(model, chain.samples[: spec.draws], oracle)
            )
        for method, tvs in per_method.items():
            arr = np.asarray(tvs)
            se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else None
            rows.append({
                "c": float(c), "method": method, "mean_tv": float(arr.mean()),
                "std_error": se, "draws": spec.draws, "seeds": spec.seeds,
            })
    return rows


def _acceptance_rows(spec: ExperimentSpec) -> list[dict]:
    root = SeedPath(spec.root_seed)
    rows = []
    cell = 0
    for grid in spec.grid_sizes:
        r, c_dim = (int(v) for v in grid.lower().split("x"))
        for c in spec.coupling_grid:
            for model_seed in range(spec.seeds):
                cfg = SpinGlassConfig(r, c_dim, spec.field_range, float(c), model_seed)
                model = generate_spin_glass(cfg)
                path = root.child(cell)
                cell += 1
                family = samplers.make_bound_family(
                    model, kind=samplers.FamilyKind.GUMBEL_MC,
                    mc_samples=spec.mc_samples, seed=path.child(0),
                )
                est = samplers.acceptance_rate(
                    model, family, spec.draws, path.child(1).generator()
                )
                ub = bounds.upper_bound(model, spec.mc_samples, path.child(2))
                lp = bounds.lower_bound_probable(model, spec.replicas, path.child(3))
                rows.append({
                    "grid": grid, "c": float(c), "seed": model_seed,
                    "accept_rate": est.rate, "accept_se": est.std_error,
                    "accept_proxy": min(1.0, math.exp(lp.value - ub.value)),
                })
    return rows


def run_experiment(spec: ExperimentSpec) -> list[str]:
    """Run one experiment; writes a CSV plus a JSON sidecar, returns the paths."""
    if spec.experiment == "lower-bounds":
        rows = bounds.bounds_report(
            spec.rows, spec.cols, spec.coupling_grid, spec.seeds,
            spec.mc_samples, spec.replicas, SeedPath(spec.root_seed), spec.field_range,
        )
        header = BOUNDS_HEADER
    elif spec.experiment == "marginal-error":
        rows = _marginal_error_rows(spec)
        header = MARGINAL_HEADER
    elif spec.experiment == "acceptance":
        rows = _acceptance_rows(spec)
        header = ACCEPT_HEADER
    else:
        raise InvalidModelError(f"unknown experiment {spec.experiment}")
    csv_path = spec.out
    _write_csv(csv_path, header, rows)
    sidecar = csv_path + ".json"
    with open(sidecar, "w") as fh:
        json.dump({"version": __version__, "spec": asdict(spec)}, fh, indent=2)
        fh.write("\n")
    return [csv_path, sidecar]


def _spec_from_args(args) -> ExperimentSpec:
    return ExperimentSpec(
        experiment=args.kind,
        rows=args.rows,
        cols=args.cols,
        grid_sizes=tuple(args.grid_sizes.split(",")) if args.grid_sizes else (),
        coupling_grid=tuple(_parse_floats(args.coupling_grid)),
        seeds=args.seeds,
        draws=args.draws,
        mc_samples=args.mc_samples,
        replicas=args.replicas,
        field_range=args.field_range,
        root_seed=_resolve_seed(args),
        out=args.out,
    )


def cmd_experiment(args) -> int:
    if args.from_sidecar:
        with open(args.from_sidecar) as fh:
            data = json.load(fh)
        raw = data["spec"]
        raw["grid_sizes"] = tuple(raw["grid_sizes"])
        raw["coupling_grid"] = tuple(raw["coupling_grid"])
        spec = ExperimentSpec(**raw)
    else:
        spec = _spec_from_args(args)
    for path in run_experiment(spec):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perturbmap",
        description="Perturb-and-MAP samplers and partition-function bounds "
        "for discrete pairwise graphical models.",
    )
    parser.add_argument("--version", action="version", version=f"perturbmap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_seed(p):
        p.add_argument("--seed", type=int, default=None,
                       help=f"root RNG seed (or set {SEED_ENV})")

    def add_out(p, default=None):
        p.add_argument("--out", default=default, help="output path ('-' for stdout)")

    def add_max_states(p):
        p.add_argument("--max-states", type=int, default=1 << 24,
                       help="enumeration cap on the configuration count")

    p = sub.add_parser("gen-model", help="generate a grid spin-glass model as JSON")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--field-range", type=float, default=1.0)
    p.add_argument("--coupling", type=float, default=1.0)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("exact", help="exact log partition function (brute force)")
    p.add_argument("--model", required=True)
    p.add_argument("--marginal", default=None, help="comma-separated vertex ids")
    add_max_states(p)
    add_out(p)
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("map", help="MAP assignment and value")
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", default="auto",
                   choices=[s.value for s in mapsolve.Strategy])
    add_max_states(p)
    add_out(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("sample", help="draw samples (JSONL: metadata header, one assignment per line)")
    p.add_argument("--model", required=True)
    p.add_argument("--sampler", required=True,
                   choices=["gumbel-full", "approx-unary", "approx-pairwise", "unbiased"])
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--m-replicas", type=int, default=1,
                   help="replica count for the expanded pairwise sampler")
    p.add_argument("--anchor", default=None, help="anchor edge 'r,s' for --m-replicas > 1")
    p.add_argument("--mc-samples", type=int, default=1000,
                   help="Monte Carlo draws per bound evaluation (unbiased sampler)")
    p.add_argument("--family", default="gumbel-mc", choices=["exact-lse", "gumbel-mc"])
    p.add_argument("--max-restarts", type=int, default=1000)
    add_max_states(p)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("baseline", help="Gibbs or Metropolis chain samples")
    p.add_argument("--model", required=True)
    p.add_argument("--sampler", required=True, choices=["gibbs", "metropolis"])
    p.add_argument("--sweeps", type=int, default=1000)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--scan", default="systematic", choices=["systematic", "random"])
    p.add_argument("--init", default="random", choices=["random", "map"])
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("bounds", help="bound sweep over couplings and model seeds (CSV)")
    p.add_argument("--bound", default="all",
                   choices=["upper", "lower-expected", "lower-probable", "all"])
    p.add_argument("--rows", type=int, default=3)
    p.add_argument("--cols", type=int, default=3)
    p.add_argument("--field-range", type=float, default=1.0)
    p.add_argument("--coupling-grid", default="0.5,1,2,3")
    p.add_argument("--seeds", type=int, default=10, help="number of model seeds per coupling")
    p.add_argument("--mc-samples", type=int, default=1000)
    p.add_argument("--replicas", type=int, default=20)
    add_max_states(p)
    add_seed(p)
    add_out(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", help="run a full experiment, emitting CSV + JSON sidecar")
    p.add_argument("--kind", choices=["lower-bounds", "marginal-error", "acceptance"],
                   default=None)
    p.add_argument("--rows", type=int, default=3)
    p.add_argument("--cols", type=int, default=3)
    p.add_argument("--grid-sizes", default="", help="acceptance experiment sizes, e.g. '2x2,2x3'")
    p.add_argument("--coupling-grid", default="0.5,1,2,3")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--mc-samples", type=int, default=1000)
    p.add_argument("--replicas", type=int, default=20)
    p.add_argument("--field-range", type=float, default=1.0)
    p.add_argument("--from-sidecar", default=None,
                   help="rerun an experiment from its JSON sidecar")
    add_seed(p)
    p.add_argument("--out", default="experiment.csv")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "experiment" and not args.from_sidecar and args.kind is None:
        print(json.dumps({"error": "ValidationError",
                          "message": "--kind is required without --from-sidecar"}),
              file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except StateSpaceTooLargeError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_CAP
    except (InvalidModelError, ValueError, mapsolve.CycleError,
            mapsolve.NotAttractiveError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
