"""Command-line front end: score, select, simulate, symmetrize, replay.

Exit codes: 0 success, 1 input/config error, 2 numerical/convergence error.
Every subcommand writes ``<out>.manifest.json`` next to its output; replaying
a manifest re-runs the recorded command line.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConvergenceError, DisconnectedError, ValidationError, symmetrize
from .estimators import METHODS, EstimatorConfig, estimate, estimate_debias
from .fileio import load_set, read_records, write_pairs, write_set
from .selection import select_batch
from .simulate import JudgeModel, SimulationFailure, run_curve

log = logging.getLogger("poerank")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, argv: list[str], config: dict, seed: int | None,
                    inputs: list[str], outputs: list[Path], result: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "argv": argv,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": {str(p): _sha256(p) for p in outputs},
        "result": result or {},
        "version": __version__,
    }
    path = out.with_name(out.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def _estimator_config(args) -> EstimatorConfig:
    try:
        return EstimatorConfig(method=args.method, debias=args.debias, alpha=args.alpha, beta=args.beta,
                               sigma0_sq=args.sigma0_sq)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def cmd_score(args, argv: list[str]) -> int:
    cfg = _estimator_config(args)
    cset = load_set(args.input, args.n)
    if args.symmetric:
        cset = symmetrize(cset)
    debias = None
    if cfg.debias and cset.has_probs:
        debias = estimate_debias(cset)
    est = estimate(cset, cfg, debias)
    out = {
        "method": cfg.method,
        "scores": {str(i): float(v) for i, v in enumerate(est.scores)},
    }
    if est.covariance is not None:
        out["covariance"] = [[float(v) for v in row] for row in est.covariance]
    if debias is not None:
        out["debias"] = {"mean_p": debias.mean_p, "beta_g": debias.beta_g, "gamma_bt": debias.gamma_bt}
    text = json.dumps(out, indent=1) + "\n"
    if args.out == "-":
        sys.stdout.write(text)
        return EXIT_OK
    path = Path(args.out)
    path.write_text(text)
    config = {k: getattr(cfg, k) for k in ("method", "debias", "alpha", "beta", "sigma0_sq", "sigma_sq",
                                           "zermelo_tol", "zermelo_prior", "max_iters")}
    config["symmetric"] = args.symmetric
    result = {"n_records": len(cset), "n_clamped": cset.n_clamped}
    if debias is not None:
        result["gamma_bt"] = debias.gamma_bt
        result["beta_g"] = debias.beta_g
    _write_manifest(path, "score", argv, config, None, [args.input], [path], result)
    return EXIT_OK


def _poll_probability(pairs_out: Path, probs_in: Path, step: int, i: int, j: int,
                      timeout: float, interval: float) -> float:
    with pairs_out.open("a") as fh:
        fh.write(json.dumps({"i": i, "j": j, "step": step}) + "\n")
    deadline = time.monotonic() + timeout
    while True:
        if probs_in.exists():
            for line in probs_in.read_text().splitlines():
                if not line.strip():
                    continue
                obj = json.loads(line)
                if obj.get("step") == step or (obj.get("step") is None and (obj.get("i"), obj.get("j")) == (i, j)):
                    return float(obj["p"])
        if time.monotonic() > deadline:
            raise CliError(f"timed out waiting for a probability for step {step} pair ({i}, {j}) in {probs_in}")
        time.sleep(interval)


def cmd_select(args, argv: list[str]) -> int:
    n, k = args.n, args.k
    probs = None
    inputs: list[str] = []
    if args.mode == "laplace-bt":
        if args.input:
            table = {}
            for row in read_records(args.input):
                if row.get("p") is None:
                    raise CliError(f"{args.input}: laplace-bt needs a probability on every row")
                table[(int(row["i"]), int(row["j"]))] = float(row["p"])
            probs = table
            inputs.append(args.input)
        elif args.interactive_file:
            pairs_out = Path(args.interactive_file)
            probs_in = pairs_out.with_name(pairs_out.name + ".probs")
            pairs_out.write_text("")
            counter = iter(range(10**9))

            def probs(i, j):
                return _poll_probability(pairs_out, probs_in, next(counter), i, j, args.timeout, args.poll_interval)
        else:
            raise CliError("laplace-bt selection needs --input or --interactive-file")
    state = select_batch(n, k, args.mode, probs=probs, unique_pairs=args.unique_pairs)
    if args.out == "-":
        for step, (i, j) in enumerate(state.chosen):
            print(json.dumps({"i": i, "j": j, "step": step}))
    else:
        path = Path(args.out)
        write_pairs(path, state.chosen)
        config = {"n": n, "k": k, "mode": args.mode, "unique_pairs": args.unique_pairs}
        _write_manifest(path, "select", argv, config, None, inputs, [path], {"log_det": state.log_det})
    print(f"log_det {state.log_det:.17g}", file=sys.stderr)
    return EXIT_OK


def _k_values(args, n: int) -> list[int]:
    k_min = args.k_min if args.k_min is not None else 2 * n
    k_max = args.k_max if args.k_max is not None else n * (n - 1)
    step = args.k_step if args.k_step is not None else n
    if step <= 0 or k_min > k_max:
        raise CliError(f"empty k range {k_min}..{k_max} step {step}")
    ks = list(range(k_min, k_max + 1, step))
    if ks[-1] != k_max:
        ks.append(k_max)
    return ks


def _workers() -> int:
    raw = os.environ.get("POE_RANK_THREADS")
    if not raw:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise CliError(f"POE_RANK_THREADS must be an integer, got {raw!r}") from exc


def cmd_simulate(args, argv: list[str]) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise CliError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    try:
        if args.judge:
            judge = JudgeModel.from_json(args.judge)
        else:
            judge = JudgeModel.random(args.n, args.seed, temperature=args.temperature,
                                      noise_sd=args.noise_sd, position_bias=args.position_bias)
    except (ValueError, KeyError, OSError) as exc:
        raise CliError(f"bad judge: {exc}") from exc
    n = judge.n_items
    ks = _k_values(args, n)
    code = EXIT_OK
    try:
        result = run_curve(judge, methods, ks, trials=args.trials, selection=args.selection,
                           symmetric=not args.non_symmetric, rng_seed=args.seed, metric=args.metric,
                           debias=args.debias, workers=_workers())
    except SimulationFailure as exc:
        log.error("%s", exc)
        result, code = exc.result, EXIT_NUMERIC
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    path = Path(args.out)
    path.write_text(result.to_csv())
    mirror = path.with_suffix(".json")
    mirror.write_text(result.to_json() + "\n")
    config = {
        "judge": judge.to_dict(),
        "methods": methods,
        "k_values": ks,
        "trials": args.trials,
        "selection": args.selection,
        "symmetric": not args.non_symmetric,
        "metric": args.metric,
        "debias": args.debias,
    }
    _write_manifest(path, "simulate", argv, config, args.seed, [args.judge] if args.judge else [],
                    [path, mirror])
    return code


def cmd_symmetrize(args, argv: list[str]) -> int:
    cset = symmetrize(load_set(args.input, args.n))
    path = Path(args.out)
    write_set(path, cset)
    _write_manifest(path, "symmetrize", argv, {"n": args.n}, None, [args.input], [path],
                    {"n_records": len(cset)})
    return EXIT_OK


def cmd_replay(args, argv: list[str]) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    old_argv = manifest["argv"]
    if not args.check:
        return main(old_argv)
    # re-run into a scratch directory and compare output bytes
    with tempfile.TemporaryDirectory() as tmp:
        outputs = list(manifest["outputs"])
        primary = outputs[0]
        scratch = str(Path(tmp) / Path(primary).name)
        new_argv = list(old_argv)
        new_argv = [a for a in new_argv if not a.startswith("--out=")]
        if "--out" in new_argv:
            new_argv[new_argv.index("--out") + 1] = scratch
        else:
            new_argv += ["--out", scratch]
        code = main(new_argv)
        if code != EXIT_OK:
            return code
        mismatched = []
        for out, digest in manifest["outputs"].items():
            candidate = Path(tmp) / Path(out).name
            if not candidate.exists() or _sha256(candidate) != digest:
                mismatched.append(out)
    if mismatched:
        print(f"replay mismatch: {', '.join(mismatched)}", file=sys.stderr)
        return EXIT_NUMERIC
    print("replay reproduced all outputs", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poerank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="infer scores from a comparison file")
    p.add_argument("--input", required=True, help="JSON-lines or CSV comparisons")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--debias", action="store_true")
    p.add_argument("--symmetric", action="store_true", help="combine both presentation orders first")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--sigma0-sq", type=float, default=1.0)
    p.add_argument("--out", default="scores.json", help="output path, '-' for stdout (no manifest)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("select", help="greedy information-optimal comparison selection")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--mode", choices=("gaussian", "laplace-bt"), default="gaussian")
    p.add_argument("--unique-pairs", action="store_true", help="never select a pair twice")
    p.add_argument("--input", help="probabilities for laplace-bt mode")
    p.add_argument("--interactive-file",
                   help="laplace-bt handshake: pairs are appended here, probabilities read from <file>.probs")
    p.add_argument("--timeout", type=float, default=600.0)
    p.add_argument("--poll-interval", type=float, default=0.05)
    p.add_argument("--out", default="pairs.jsonl")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="efficiency curves against a synthetic judge")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--k-step", type=int)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--methods", default="win-ratio,avg-prob,poe-bt,poe-g")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--judge", help="JSON judge fixture")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--position-bias", type=float, default=0.0)
    p.add_argument("--selection", choices=("random", "gaussian", "laplace-bt"), default="random")
    sym = p.add_mutually_exclusive_group()
    sym.add_argument("--symmetric", action="store_true", help="combine both orders (default)")
    sym.add_argument("--non-symmetric", action="store_true")
    p.add_argument("--debias", action="store_true")
    p.add_argument("--metric", choices=("spearman", "pearson"), default="spearman")
    p.add_argument("--out", default="curve.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("symmetrize", help="combine both presentation orders of each pair")
    p.add_argument("--input", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_symmetrize)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--check", action="store_true", help="re-run in a scratch dir and compare output hashes")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DisconnectedError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
