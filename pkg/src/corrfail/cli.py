"""Batch command-line surface for the modeling pipeline.

Stages hand off through files: `hazard` writes a constraints directory,
`fit` turns constraints into a model directory, `sample`/`entropy`
consume model directories, `ipf` balances demand matrices and `phase`
runs the trip-completion experiment.  Every run writes a manifest
(command, fully resolved config, seed, input digests, version, duration)
into its output directory; reruns with identical inputs and seed produce
byte-identical primary outputs.

Exit codes: 0 success, 2 usage/config error, 3 input/feasibility error,
4 numerical failure.
"""

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, dg, entropy, fileio, hazard, ising, network
from .core import constraints_to_second_moments
from .errors import (
    CorrfailError,
    DegenerateMarginalError,
    DimensionError,
    EnumerationCapError,
    FeasibilityError,
    InputFormatError,
    NumericalError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4


class UsageError(CorrfailError, ValueError):
    """Bad configuration or flag combination (exit code 2)."""


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return "sha256:" + h.hexdigest()


def _load_config(path):
    if path is None:
        return {}
    data = fileio.load_json(path)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return data


def _resolve_seed(args, config):
    if args.seed is not None:
        return int(args.seed)
    return int(config.get("seed", 0))


def _write_manifest(out_dir, command, config, seed, inputs, started):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(name): _sha256(path) for name, path in inputs.items()},
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    fileio.dump_json(manifest, Path(out_dir) / "run_manifest.json")


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pop_config(config, key, default):
    return config[key] if key in config else default


def _gibbs_config(data, seed, default_n=100_000, default_burn=1_000):
    data = dict(data or {})
    data.setdefault("n_samples", default_n)
    data.setdefault("burn_in", default_burn)
    data["seed"] = seed
    try:
        return ising.GibbsConfig(**data)
    except TypeError as exc:
        raise UsageError(f"bad sampler config: {exc}") from exc


def _train_config(config, seed):
    data = {k: v for k, v in config.items() if k not in ("seed", "synth_samples")}
    gibbs = data.pop("samples_per_iter", None)
    if gibbs is not None:
        gibbs = _gibbs_config(gibbs, seed=0)
    try:
        return ising.TrainConfig(samples_per_iter=gibbs, seed=seed, **data)
    except TypeError as exc:
        raise UsageError(f"bad train config: {exc}") from exc


# ---------------------------------------------------------------- commands


def cmd_hazard(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out = _out_dir(args)
    inputs = {"sites": args.sites, "scenario": args.scenario}
    if args.manifest_only:
        _write_manifest(out, "hazard", config, seed, inputs, started)
        return EXIT_OK
    sites = hazard.load_sites(args.sites)
    scenario = hazard.load_scenario(args.scenario)
    constraints = hazard.build_constraints(sites, scenario)
    fileio.save_constraints(
        constraints, out,
        provenance={
            "source": "hazard",
            "scenario": hazard.scenario_to_dict(scenario),
            "n_sites": len(sites),
        },
    )
    _write_manifest(out, "hazard", config, seed, inputs, started)
    return EXIT_OK


def cmd_fit(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out = _out_dir(args)
    cdir = Path(args.constraints)
    inputs = {
        "means": cdir / "means.csv",
        "corr": cdir / "corr.csv",
        "descriptor": cdir / "constraints.json",
    }
    if args.manifest_only:
        _write_manifest(out, f"fit:{args.engine}", config, seed, inputs, started)
        return EXIT_OK
    constraints = fileio.load_constraints(cdir)

    if args.engine == "dg":
        psi_tol = float(_pop_config(config, "psi_tol", 1e-10))
        t0 = time.perf_counter()
        model = dg.fit_dg(constraints, psi_tol=psi_tol)
        fit_seconds = time.perf_counter() - t0
        dg.save_model(model, out, provenance={"source": "fit:dg"})
        fileio.dump_json(
            {
                "engine": "dg",
                "dimension": model.dimension,
                "repair_log": model.repair_log.to_dict(),
                "fit_seconds": round(fit_seconds, 6),
            },
            out / "fit_report.json",
        )
    else:
        train = _train_config(
            {k: v for k, v in config.items() if k != "psi_tol"}, seed
        )
        if args.engine == "ising-ml":
            target = constraints_to_second_moments(constraints)
            report = ising.fit_ml(target, train)
        else:  # ising-cd
            n_synth = int(_pop_config(config, "synth_samples", 100_000))
            data = ising.synthesize_data(constraints, n_synth,
                                         seed=_sub(seed, "synthesize"))
            report = ising.fit_cd(data, train)
        ising.save_model(report.final_model, out,
                         provenance={"source": f"fit:{args.engine}"})
        fileio.dump_json(report.to_dict(), out / "fit_report.json")
    _write_manifest(out, f"fit:{args.engine}", config, seed, inputs, started)
    return EXIT_OK


def _sub(seed, *tags):
    from ._rng import spawn_seed

    return spawn_seed(seed, *tags)


def cmd_sample(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out = _out_dir(args)
    mdir = Path(args.model)
    desc = fileio.load_json(mdir / "model.json")
    kind = desc.get("kind")
    inputs = {"model": mdir / "model.json"}
    if kind == "ising":
        inputs["coupling"] = mdir / "coupling.csv"
    elif kind == "dg":
        inputs["gamma"] = mdir / "gamma.csv"
        inputs["lambda"] = mdir / "lambda.csv"
    else:
        raise InputFormatError(f"{mdir}: unknown model kind {kind!r}")
    if args.manifest_only:
        _write_manifest(out, "sample", config, seed, inputs, started)
        return EXIT_OK

    if kind == "ising":
        model = ising.load_model(mdir)
        gdata = dict(config.get("gibbs") or {})
        gdata["n_samples"] = args.n
        gcfg = _gibbs_config(gdata, seed)
        samples = ising.gibbs_sample(model, gcfg)
    else:
        model = dg.load_model(mdir)
        samples = dg.sample_dg(model, args.n, seed)
    fileio.save_samples(samples, out / "samples.csv", seed)
    _write_manifest(out, "sample", config, seed, inputs, started)
    return EXIT_OK


def _parse_sizes(spec):
    if spec is None:
        raise UsageError("--sizes is required for the sweep method")
    sizes = []
    for part in spec.split(","):
        part = part.strip()
        if ":" in part:
            lo, hi = part.split(":")
            sizes.extend(range(int(lo), int(hi) + 1))
        elif part:
            sizes.append(int(part))
    if not sizes:
        raise UsageError(f"no sizes parsed from {spec!r}")
    return sizes


def cmd_entropy(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out = _out_dir(args)
    target = Path(args.target)
    method = args.method

    is_model = (target / "model.json").exists()
    inputs = {}
    if is_model:
        inputs["model"] = target / "model.json"
    else:
        inputs["descriptor"] = target / "constraints.json"
    if args.manifest_only:
        _write_manifest(out, f"entropy:{method}", config, seed, inputs, started)
        return EXIT_OK

    to_bits = bool(config.get("bits", False))
    if method == "sweep":
        if is_model:
            raise UsageError("sweep needs a constraints directory, not a model")
        constraints = fileio.load_constraints(target)
        sizes = _parse_sizes(args.sizes)
        sched = entropy.AnnealSchedule.geometric(
            n_steps=int(config.get("n_steps", 100)),
            samples_per_step=int(config.get("samples_per_step", 2000)),
            burn_in_per_step=int(config.get("burn_in_per_step", 1000)),
        )
        rows = entropy.entropy_size_sweep(
            constraints, sizes, seed=seed,
            ising_method=config.get("ising_method", "annealed"),
            schedule=sched,
            n_outer=int(config.get("n_outer", 4)),
            n_pmf=int(config.get("n_pmf", 200_000)),
            dg_n_outer=int(config.get("dg_n_outer", 20_000)),
        )
        entropy.save_sweep_csv(rows, out / "sweep.csv")
        _write_manifest(out, "entropy:sweep", config, seed, inputs, started)
        return EXIT_OK

    if not is_model:
        raise UsageError(f"method {method} needs a model directory")
    desc = fileio.load_json(target / "model.json")
    kind = desc.get("kind")
    if method == "exact":
        if kind != "ising":
            raise UsageError("exact entropy is only available for ising models")
        model = ising.load_model(target)
        est = entropy.ising_entropy_exact(
            model, cap=config.get("enumeration_cap")
        )
    elif method == "annealed":
        if kind != "ising":
            raise UsageError("annealed entropy applies to ising models")
        model = ising.load_model(target)
        sched = entropy.AnnealSchedule.geometric(
            n_steps=int(config.get("n_steps", 100)),
            samples_per_step=int(config.get("samples_per_step", 2000)),
            burn_in_per_step=int(config.get("burn_in_per_step", 1000)),
            seed=seed,
        )
        est = entropy.ising_entropy_annealed(
            model, sched,
            n_outer=int(config.get("n_outer", 1)),
            n_energy_samples=int(config.get("n_energy_samples", 100_000)),
        )
    elif method == "mc":
        if kind != "dg":
            raise UsageError("mc entropy applies to dg models")
        model = dg.load_model(target)
        est = entropy.dg_entropy_mc(
            model,
            n_outer=int(config.get("n_outer", 20_000)),
            n_pmf=int(config.get("n_pmf", 200_000)),
            seed=seed,
        )
    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(f"unknown method {method}")
    payload = est.to_dict()
    if to_bits:
        payload["value_bits"] = est.bits
    fileio.dump_json(payload, out / "entropy.json")
    _write_manifest(out, f"entropy:{method}", config, seed, inputs, started)
    return EXIT_OK


def cmd_ipf(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out = _out_dir(args)
    inputs = {"targets": args.targets}
    if args.init is not None:
        inputs["init"] = args.init
    if args.manifest_only:
        _write_manifest(out, "ipf", config, seed, inputs, started)
        return EXIT_OK
    zones, target_o, target_d = network.load_od_targets(args.targets)
    if args.init is not None:
        init = fileio.load_matrix_csv(args.init)
        if init.shape != (len(zones), len(zones)):
            raise InputFormatError(
                f"{args.init}: init matrix shape {init.shape} does not match "
                f"{len(zones)} zones"
            )
    else:
        init = np.ones((len(zones), len(zones)))
    result = network.ipf_adjust(
        init, target_o, target_d,
        eps0=float(args.eps0), max_iters=int(args.max_iters),
    )
    od = network.ODMatrix(tuple(zones), result.matrix, {})
    network.save_od_matrix(od, out / "od.csv")
    fileio.dump_json(
        {"iterations": result.iterations, "final_error": result.final_error},
        out / "ipf_report.json",
    )
    _write_manifest(out, "ipf", config, seed, inputs, started)
    return EXIT_OK


def _parse_magnitudes(spec):
    try:
        mags = [float(v) for v in spec.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad magnitude list {spec!r}") from exc
    if not mags:
        raise UsageError("need at least one magnitude")
    return mags


def cmd_phase(args):
    started = time.perf_counter()
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    out = _out_dir(args)
    inputs = {
        "edges": args.edges,
        "nodes": args.nodes,
        "od": args.od,
        "zone_map": args.zone_map,
        "scenario": args.scenario,
    }
    if args.manifest_only:
        _write_manifest(out, "phase", config, seed, inputs, started)
        return EXIT_OK
    net = network.load_network(args.edges, args.nodes)
    zone_map = network.load_zone_map(args.zone_map)
    od = network.load_od_matrix(args.od, zone_map)
    pairs = network.od_pairs_from_matrix(od, net)
    scenario = hazard.load_scenario(args.scenario)
    magnitudes = _parse_magnitudes(args.magnitudes)
    results = network.phase_experiment(
        net, pairs, scenario, magnitudes, int(args.n_reps), seed,
        mode=args.mode, weighted=not bool(config.get("unweighted", False)),
    )
    with open(out / "results.jsonl", "w") as fh:
        for res in results:
            for rep in range(res.removal_rates.size):
                fh.write(json.dumps({
                    "magnitude": res.magnitude,
                    "mode": res.mode,
                    "replicate": rep,
                    "removal_rate": float(res.removal_rates[rep]),
                    "completion_rate": float(res.completion_rates[rep]),
                }, sort_keys=True) + "\n")
    for res in results:
        counts, _, _ = res.histogram()
        name = f"hist_m{res.magnitude:g}_{res.mode}.csv"
        np.savetxt(out / name, counts, fmt="%d", delimiter=",")
    _write_manifest(out, "phase", config, seed, inputs, started)
    return EXIT_OK


# ----------------------------------------------------------------- parser


def _add_common(parser):
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="top-level seed (overrides config)")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--threads", type=int, default=None,
                        help="best-effort cap on worker threads")
    parser.add_argument("--manifest-only", action="store_true",
                        help="resolve inputs and write the manifest, skip compute")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="corrfail",
        description="correlated failure modeling pipeline",
    )
    parser.add_argument("--version", action="version",
                        version=f"corrfail {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("hazard", help="build moment constraints from a scenario")
    p.add_argument("sites", help="sites CSV (id,lat,lon or id,x_km,y_km)")
    p.add_argument("scenario", help="scenario JSON")
    _add_common(p)
    p.set_defaults(handler=cmd_hazard)

    p = sub.add_parser("fit", help="fit a model to constraints")
    p.add_argument("constraints", help="constraints directory")
    p.add_argument("--engine", required=True,
                   choices=("ising-ml", "ising-cd", "dg"))
    _add_common(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("sample", help="draw samples from a fitted model")
    p.add_argument("model", help="model directory")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    _add_common(p)
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("entropy", help="entropy estimates and size sweeps")
    p.add_argument("target", help="model directory or constraints directory")
    p.add_argument("--method", required=True,
                   choices=("exact", "annealed", "mc", "sweep"))
    p.add_argument("--sizes", default=None,
                   help="sweep sizes, e.g. '2:12' or '2,4,8'")
    _add_common(p)
    p.set_defaults(handler=cmd_entropy)

    p = sub.add_parser("ipf", help="balance a demand matrix to targets")
    p.add_argument("targets", help="targets CSV (zone,target_O,target_D)")
    p.add_argument("--init", default=None,
                   help="seed matrix CSV (default: all ones)")
    p.add_argument("--eps0", type=float, default=1e-6)
    p.add_argument("--max-iters", type=int, default=10_000)
    _add_common(p)
    p.set_defaults(handler=cmd_ipf)

    p = sub.add_parser("phase", help="trip-completion experiment over magnitudes")
    p.add_argument("edges", help="edge list CSV (u,v)")
    p.add_argument("nodes", help="node sites CSV")
    p.add_argument("--od", required=True, help="OD matrix CSV")
    p.add_argument("--zone-map", required=True, help="zone map CSV (node,zone)")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--magnitudes", required=True,
                   help="comma-separated magnitude list")
    p.add_argument("--n-reps", type=int, default=2000)
    p.add_argument("--mode", default="both",
                   choices=("correlated", "independent", "both"))
    _add_common(p)
    p.set_defaults(handler=cmd_phase)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None):
        try:
            import numba

            numba.set_num_threads(max(1, int(args.threads)))
        except (ImportError, ValueError):
            pass
    try:
        return args.handler(args)
    except (UsageError, EnumerationCapError) as exc:
        print(f"corrfail: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputFormatError, FeasibilityError, DimensionError,
            DegenerateMarginalError, FileNotFoundError) as exc:
        print(f"corrfail: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"corrfail: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"corrfail: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
