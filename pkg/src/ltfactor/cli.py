"""Command-line entry point: ``ltfactor simulate | fit | postprocess``.

Exit codes:

    0  success
    2  usage error (bad flags)
    3  invalid configuration
    4  unreadable or inconsistent data
    5  file-system or draw-file error
    6  sampler failure (a checkpoint is left next to the draws)
    7  draw file written by an incompatible format version

Every output is a deterministic function of the inputs and the seed, except
the wall-clock timing in ``report.json``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from .decomposition import component_posterior
from .impulse import ImpulseRequest, impulse_response
from .io import (
    DataFormatError, DrawFileError, DrawFileVersionError, DrawWriter, RunConfig, load_config,
    parse_config, read_csv, read_draws, write_csv,
)
from .model import ConfigError, DimensionMismatchError, McmcSettings, NumericalFailure, validate_config
from .sampler import SamplerFailure, config_digest, run_mcmc
from .simulate import simulate_dataset
from .summaries import compute_dic, estimated_loadings, shrinkage_probabilities, summarize_trajectories

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_SAMPLER, EXIT_VERSION = 0, 2, 3, 4, 5, 6, 7
THREADS_ENV = "LTFACTOR_THREADS"
REQUESTS = ("summaries", "components", "impulse", "dic")
CHECKPOINT_EVERY = 500


class UsageError(Exception):
    pass


def _version() -> str:
    for dist in metadata.packages_distributions().get("ltfactor", []):
        try:
            return metadata.version(dist)
        except metadata.PackageNotFoundError:
            continue
    return "unknown"


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_long(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    return repr(float(v))


def _manifest(out: Path, command: str, seed: int, rc: RunConfig, files, extra=None) -> None:
    man = {
        "command": command,
        "ltfactor_version": _version(),
        "seed": int(seed),
        "config_sha256": config_digest(rc.model, rc.prior),
        "config": rc.model.to_dict(),
        "files": {f: _sha256(out / f) for f in sorted(files)},
    }
    man.update(extra or {})
    _write_json(out / "manifest.json", man)


def _set_threads(flag: int | None) -> int:
    env = os.environ.get(THREADS_ENV)
    n = flag if flag is not None else (int(env) if env else None)
    if n is None:
        return 0
    if n < 1:
        raise UsageError("thread count must be >= 1")
    import numba

    n = min(n, numba.config.NUMBA_NUM_THREADS)
    with warnings.catch_warnings():
        # numba reports unusable optional threading layers; the fallback is fine
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(n)
    return n


def _with_seed(rc: RunConfig, seed: int | None) -> tuple[RunConfig, int]:
    if seed is None:
        return rc, rc.model.mcmc.rng_seed
    mc = McmcSettings.from_dict({**rc.model.mcmc.to_dict(), "rng_seed": int(seed)})
    model = type(rc.model).from_dict({**rc.model.to_dict(), "mcmc": mc.to_dict()})
    return RunConfig(model, rc.prior, rc.simulate, rc.impulse), int(seed)


def _config(args) -> RunConfig:
    if args.config is None:
        return parse_config({}, args.variant)
    return load_config(args.config, args.variant)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    rc = _config(args)
    seed = args.seed if args.seed is not None else rc.simulate.get("seed", rc.model.mcmc.rng_seed)
    spec = rc.generation_spec()
    truth = simulate_dataset(rc.model, spec, np.random.default_rng(int(seed)), rc.prior)
    # everything is computed before the first file is written
    out = _outdir(args.out)
    write_csv(out / "data.csv", truth.data)
    st = truth.state
    arrays = {k: getattr(st, k) for k in st.__dataclass_fields__ if getattr(st, k) is not None}
    with open(out / "truth.npz", "wb") as fh:
        np.savez(fh, **arrays)
    _manifest(out, "simulate", seed, rc, ["data.csv", "truth.npz"],
              {"regenerations": truth.regenerations, "T": spec.T})
    return EXIT_OK


def cmd_fit(args) -> int:
    rc = _config(args)
    rc, seed = _with_seed(rc, args.seed)
    data = read_csv(args.data, stride=args.stride, drop_leading=args.drop_leading)
    try:
        validate_config(rc.model, rc.prior, data)
    except DimensionMismatchError as exc:
        raise DataFormatError(f"{args.data}: {exc}") from None
    threads = _set_threads(args.threads)
    out = _outdir(args.out)
    ckpt = out / "checkpoint.npz"
    resume = bool(args.resume)
    if resume and not ckpt.exists():
        raise ConfigError(f"--resume given but {ckpt} does not exist")
    writer = DrawWriter(out / "draws.ltd", rc.model, data.T, data.channel_names, resume=resume)
    start = time.perf_counter()
    try:
        draws = run_mcmc(data, rc.model, rc.prior, seed=seed, sink=writer, checkpoint_path=ckpt,
                         checkpoint_every=CHECKPOINT_EVERY, resume=resume)
    except SamplerFailure as exc:
        writer.snapshot()
        writer.close()
        print(f"sampler failure: {exc}; checkpoint at {ckpt}", file=sys.stderr)
        return EXIT_SAMPLER
    elapsed = time.perf_counter() - start
    if ckpt.exists():
        ckpt.unlink()
    report = {
        "seed": seed, "variant": rc.model.variant, "T": data.T, "m": data.m,
        "n_draws": len(draws), "burn_in": rc.model.mcmc.burn_in, "thin": rc.model.mcmc.thin,
        "acceptance": draws.acceptance, "elapsed_seconds": elapsed, "threads": threads,
        "resumed": resume,
    }
    _write_json(out / "report.json", report)
    _manifest(out, "fit", seed, rc, ["draws.ltd"], {"data_sha256": _sha256(args.data)})
    return EXIT_OK


def _export_summaries(draws, out: Path) -> list[str]:
    rows = []
    selectors = ["x", "delta", "w", "sigma2", "beta", "b"] + (["alpha", "a"] if draws.config.plus else [])
    for which in selectors:
        s = summarize_trajectories(draws, which)
        for j, name in enumerate(s.series):
            for ti, t in enumerate(s.times):
                for stat, arr in (("mean", s.mean), ("lower", s.lower), ("upper", s.upper)):
                    rows.append((int(t), name, stat, _fmt(arr[j, ti])))
    _write_long(out / "trajectories.csv", ("t", "series", "statistic", "value"), rows)
    files = ["trajectories.csv"]
    probs = shrinkage_probabilities(draws)
    for key, fname in (("beta", "shrinkage.csv"), ("alpha", "shrinkage_alpha.csv")):
        if key not in probs:
            continue
        prob = probs[key]
        bhat = estimated_loadings(draws, key)
        # channel indices are 1-based over all channels; loading rows start at channel 2
        shift = 2 if key == "beta" else 1
        idx = np.argwhere(np.ones(prob.shape, bool))
        rows = [(i + shift, k + 1, t + 1, _fmt(prob[i, k, t]), _fmt(bhat[i, k, t])) for i, k, t in idx]
        _write_long(out / fname, ("i", "k", "t", "prob", "b_hat"), rows)
        files.append(fname)
    return files


def _export_components(draws, out: Path) -> list[str]:
    cp = component_posterior(draws)
    rows = []
    for qname, band in (("frequency", cp.frequency), ("modulus", cp.modulus), ("quasi", cp.quasi)):
        T, G = band["mean"].shape
        for g in range(G):
            for t in range(T):
                for stat in ("mean", "lower", "upper"):
                    rows.append((t + 1, f"quasi{g + 1}_{qname}", stat, _fmt(band[stat][t, g])))
    T, P = cp.real["mean"].shape
    for g in range(P):
        for t in range(T):
            for stat in ("mean", "lower", "upper"):
                rows.append((t + 1, f"real{g + 1}", stat, _fmt(cp.real[stat][t, g])))
    _write_long(out / "components.csv", ("t", "series", "statistic", "value"), rows)
    _write_json(out / "components.json", {"used_draws": cp.used, "skipped_draws": cp.skipped})
    return ["components.csv", "components.json"]


def _impulse_request(args, rc: RunConfig | None, T: int) -> ImpulseRequest:
    settings = dict(rc.impulse) if rc is not None else {}
    if args.origins:
        settings["origins"] = [int(v) for v in args.origins.split(",")]
    if args.horizon is not None:
        settings["horizon"] = args.horizon
    if args.seed is not None:
        settings["seed"] = args.seed
    settings.setdefault("origins", [T // 4, T // 2, (3 * T) // 4])
    settings.setdefault("horizon", 80)
    try:
        return ImpulseRequest(**settings)
    except TypeError as exc:
        raise ConfigError(f"impulse section: {exc}") from None


def _export_impulse(draws, args, rc, data, out: Path) -> list[str]:
    req = _impulse_request(args, rc, draws.T)
    surf = impulse_response(draws, req, data=data)
    names = surf.channel_names or tuple(f"y{i + 1}" for i in range(draws.config.m))
    rows = []
    for i, name in enumerate(names):
        for o, t0 in enumerate(surf.origins):
            for h in range(surf.horizon):
                rows.append((name, t0, h + 1, _fmt(surf.responses[i, o, h])))
    _write_long(out / "impulse.csv", ("channel", "t0", "horizon", "response"), rows)
    flagged = {names[i]: [surf.origins[o] for o in np.nonzero(surf.divergent[i])[0]]
               for i in range(len(names)) if surf.divergent[i].any()}
    _write_json(out / "impulse.json", {"shock": surf.shock, "replicates": req.replicates,
                                       "seed": req.seed, "divergent": flagged})
    return ["impulse.csv", "impulse.json"]


def cmd_postprocess(args) -> int:
    if args.request not in REQUESTS:
        raise UsageError(f"unknown request {args.request!r}; choose from {', '.join(REQUESTS)}")
    draws = read_draws(args.draws)
    if len(draws) == 0:
        raise DrawFileError(f"{args.draws}: no draws")
    rc = load_config(args.config) if args.config else None
    data = None
    if args.data:
        data = read_csv(args.data, stride=args.stride, drop_leading=args.drop_leading)
        if data.values.shape != (draws.T, draws.config.m):
            raise DataFormatError(f"{args.data}: shape {data.values.shape} does not match the draws "
                                  f"({draws.T}, {draws.config.m})")
    if args.request in ("dic",) or (args.request == "impulse" and draws.config.plus):
        if data is None:
            raise UsageError(f"request {args.request!r} needs --data")
    out = _outdir(args.out)
    if args.request == "summaries":
        files = _export_summaries(draws, out)
    elif args.request == "components":
        files = _export_components(draws, out)
    elif args.request == "impulse":
        files = _export_impulse(draws, args, rc, data, out)
    else:
        _write_json(out / "dic.json", compute_dic(draws, data).to_dict())
        files = ["dic.json"]
    for f in files:
        print(out / f)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ltfactor", description="Latent threshold dynamic factor models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_required=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the configured seed")
        sp.add_argument("--threads", type=int, help=f"kernel threads (env {THREADS_ENV})")
        sp.add_argument("--variant", choices=("M", "M+"), help="overrides the configured model variant")
        sp.add_argument("--data", required=data_required, help="observation CSV")
        sp.add_argument("--stride", type=int, default=1, help="keep every stride-th row")
        sp.add_argument("--drop-leading", type=int, default=0, help="rows to discard first")

    common(sub.add_parser("simulate", help="simulate data with recorded truth"))
    fit = sub.add_parser("fit", help="run the MCMC sampler")
    common(fit, data_required=True)
    fit.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    pp = sub.add_parser("postprocess", help="export posterior summaries")
    common(pp)
    pp.add_argument("--draws", required=True, help="draw file written by fit")
    pp.add_argument("--request", required=True, help="|".join(REQUESTS))
    pp.add_argument("--origins", help="comma-separated impulse origins t0")
    pp.add_argument("--horizon", type=int, help="impulse horizon")
    return p


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "postprocess": cmd_postprocess}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command != "fit":
            _set_threads(args.threads)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DrawFileVersionError as exc:
        print(f"version mismatch: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
