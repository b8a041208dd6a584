"""Command-line entry point: train, verify, simulate, bench, validate-system."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import network, optimize, sampling, simulate, systems, verify
from .exceptions import CheckpointError, ConfigError, NumericError

log = logging.getLogger("contraction_pinn")

EXIT_OK = 0
EXIT_BELOW_THRESHOLD = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_CHECKPOINT = 5
EXIT_NUMERIC = 6

# reference mean squared estimation error (%) at 15% noise, x_hat(0) = x(0)
REFERENCE_MSE = {
    "vanderpol": {2.5: 0.53, 4.0: 0.47, 5.0: 0.22},
    "reverse_duffing": {2.5: 0.062, 4.0: 0.016, 5.0: 0.013},
}

SUITES = {
    "full": {
        "configs": ["vanderpol_lambda2.5", "reverse_duffing"],
        "lambdas": [2.5, 4.0, 5.0],
        "seeds": 5,
    },
    "ci": {
        "configs": ["vanderpol_ci", "reverse_duffing_ci"],
        "lambdas": [2.5, 4.0, 5.0],
        "seeds": 5,
    },
}


def _provenance(cfg: config_mod.RunConfig, **extra) -> str:
    doc = {"config_name": cfg.name, "config": cfg.raw}
    doc.update(extra)
    return json.dumps(doc, sort_keys=True)


def _out_dir(cfg, override=None) -> Path:
    if override is not None:
        return Path(override)
    if cfg.raw["out_dir"]:
        return Path(cfg.raw["out_dir"])
    return Path("runs") / cfg.name


@dataclass
class TrainResult:
    net: network.Mlp
    record: optimize.TrainRecord
    checkpoint: Path
    history: Path
    files: list = field(default_factory=list)


def train_from_config(cfg: config_mod.RunConfig, out_dir) -> TrainResult:
    """Sample collocation points, train, and write checkpoint, history and resolved config."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    system = cfg.system
    spec = cfg.loss_spec()
    tcfg = cfg.train_config()
    net0 = network.init_params(cfg.layer_dims, cfg.raw["network"]["seed"],
                               cfg.raw["network"]["activation"])
    colloc = sampling.sample_collocation(system, cfg.raw["sampling"]["n_points"],
                                         cfg.raw["sampling"]["seed"])
    log.info("training %s: layers %s, %d points, %d+%d epochs",
             system.name, cfg.layer_dims, len(colloc), tcfg.adam_epochs, tcfg.lbfgs_epochs)
    ckpt_dir = out_dir / "checkpoints" if tcfg.checkpoint_every else None
    try:
        net, record = optimize.train(system, net0, colloc, spec, tcfg, checkpoint_dir=ckpt_dir)
    except optimize.TrainingError as exc:
        kept = network.save_checkpoint(
            exc.net, out_dir / "checkpoint_last_good.json",
            {"system": system.name, "lambda": spec.lam, "config": cfg.raw, "failed": str(exc)},
        )
        exc.record.to_csv(out_dir / "history.csv", header_comment=_provenance(cfg))
        log.error("training aborted; last good parameters kept in %s", kept)
        raise
    metadata = {
        "system": system.name,
        "lambda": spec.lam,
        "mu1": spec.mu1,
        "mu2": spec.mu2,
        "rho": list(spec.rho),
        "penalty_form": spec.penalty_form,
        "network_seed": cfg.raw["network"]["seed"],
        "sampling_seed": cfg.raw["sampling"]["seed"],
        "train_seed": tcfg.seed,
        "adam_epochs": tcfg.adam_epochs,
        "lbfgs_epochs": tcfg.lbfgs_epochs,
        "config_name": cfg.name,
        "config_digest": cfg.digest(),
        "config": cfg.raw,
        "final_loss": record.total[-1] if len(record) else None,
    }
    net.metadata = metadata
    ckpt = network.save_checkpoint(net, out_dir / "checkpoint.json", metadata)
    hist = record.to_csv(out_dir / "history.csv", header_comment=_provenance(cfg))
    resolved = out_dir / "config.resolved.yaml"
    resolved.write_text(cfg.to_yaml())
    return TrainResult(net, record, ckpt, hist, [ckpt, hist, resolved])


def _system_for(net: network.Mlp, name=None):
    name = name or net.metadata.get("system")
    if not name:
        raise ConfigError("checkpoint does not record its system; pass --system")
    return systems.get_system(name)


def verify_checkpoint(net, grid=50, tol=1e-2, lam=None, system_name=None):
    system = _system_for(net, system_name)
    lam = float(lam if lam is not None else net.metadata.get("lambda", 2.5))
    return verify.verify(system, net, lam, grid, tol)


def simulate_checkpoint(net, cfg_sim: simulate.SimConfig, system_name=None):
    return simulate.simulate(_system_for(net, system_name), net, cfg_sim)


def default_sim_config(net, system, **overrides) -> simulate.SimConfig:
    raw = net.metadata.get("config", {}).get("simulate", {})
    fields = dict(config_mod.DEFAULTS["simulate"])
    fields.update({k: v for k, v in raw.items() if k in fields})
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if fields["x0"] is None:
        fields["x0"] = system.x0 if system.x0 is not None else [0.0] * system.n
    if fields["xhat0"] is None:
        fields["xhat0"] = [0.0] * system.n
    return simulate.SimConfig(**fields)


def run_bench(suite_name, out_dir, seeds=None, threads=None, lambdas=None):
    """Train (or load cached) networks per contraction rate and tabulate noisy-run errors.

    Returns the list of summary rows; each row dict also lands in
    ``bench_<suite>.csv``. Stage failures are recorded per row.
    """
    if suite_name not in SUITES:
        raise ConfigError(f"unknown suite {suite_name!r}; available: {sorted(SUITES)}")
    suite = SUITES[suite_name]
    n_seeds = seeds if seeds is not None else suite["seeds"]
    lambdas = lambdas if lambdas is not None else suite["lambdas"]
    out_dir = Path(out_dir)
    cache = out_dir / "cache"
    rows, per_seed = [], []
    for cfg_name in suite["configs"]:
        base = config_mod.load(cfg_name)
        for lam in lambdas:
            cfg = base.with_overrides(lam=lam)
            system = cfg.system
            row = {"system": system.name, "lambda": float(lam), "config": cfg_name,
                   "digest": cfg.digest()}
            try:
                ckpt = cache / cfg.digest() / "checkpoint.json"
                if ckpt.exists():
                    net = network.load_checkpoint(ckpt)
                else:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        net = train_from_config(cfg, ckpt.parent).net
                values = []
                for seed in range(n_seeds):
                    sim_cfg = cfg.sim_config(noise_seed=seed, noise_sigma=0.15)
                    sim_cfg.xhat0 = sim_cfg.x0
                    traj = simulate.simulate(system, net, sim_cfg)
                    if traj.diagnostic:
                        raise NumericError(traj.diagnostic)
                    mse = simulate.mse_percent(traj)
                    values.append(mse)
                    per_seed.append((system.name, float(lam), seed, mse))
                vals = np.array(values)
                ref = REFERENCE_MSE.get(system.name, {}).get(float(lam))
                row.update(
                    mse_mean=float(vals.mean()), mse_std=float(vals.std()),
                    mse_min=float(vals.min()), mse_max=float(vals.max()),
                    n_seeds=n_seeds, reference_value=ref,
                    ratio_to_reference=float(vals.mean() / ref) if ref else None,
                    status="ok",
                )
            except (NumericError, optimize.TrainingError, CheckpointError) as exc:
                row.update(mse_mean=None, mse_std=None, mse_min=None, mse_max=None,
                           n_seeds=n_seeds, reference_value=REFERENCE_MSE.get(system.name, {}).get(float(lam)),
                           ratio_to_reference=None, status=f"failed: {exc}")
            rows.append(row)
            log.info("bench %s lambda=%g: %s", system.name, lam, row.get("mse_mean"))
    _write_bench(out_dir / f"bench_{suite_name}.csv", rows, suite_name, n_seeds)
    lines = ["system,lambda,seed,mse_percent"]
    lines += [f"{s},{lam!r},{seed},{m!r}" for s, lam, seed, m in per_seed]
    (out_dir / f"bench_{suite_name}_seeds.csv").write_text("\n".join(lines) + "\n")
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_bench(path, rows, suite_name, n_seeds):
    cols = ["system", "lambda", "mse_mean", "mse_std", "mse_min", "mse_max", "n_seeds",
            "reference_value", "ratio_to_reference", "config", "digest", "status"]
    suite = SUITES[suite_name]
    lines = [f"# suite: {json.dumps({'name': suite_name, **suite, 'seeds': n_seeds}, sort_keys=True)}",
             "# mse_percent = 100 * mean |x - x_hat|^2 / mean |x|^2, x_hat(0) = x(0), noise sigma 0.15",
             ",".join(cols)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(c)).replace(",", ";") for c in cols))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def monotone_non_increasing(rows, system) -> bool:
    vals = [r["mse_mean"] for r in sorted(rows, key=lambda r: r["lambda"]) if r["system"] == system]
    if any(v is None for v in vals):
        return False
    return all(b <= a for a, b in zip(vals, vals[1:]))


# --- argument handling -------------------------------------------------------

def _threads(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _cmd_train(args):
    cfg = config_mod.load(args.config).with_overrides(seed=args.seed, lam=args.lambda_)
    out = _out_dir(cfg, args.out_dir)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cfg.loss_spec()
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = train_from_config(cfg, out)
    rec = result.record
    if len(rec):
        print(f"loss {rec.total[0]:.6g} -> {rec.total[-1]:.6g} over {len(rec)} epochs")
    print(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _cmd_verify(args):
    net = network.load_checkpoint(args.checkpoint)
    report = verify_checkpoint(net, args.grid, args.tol, args.lambda_, args.system)
    threshold = args.threshold
    if threshold is None:
        threshold = net.metadata.get("config", {}).get("verify", {}).get("threshold", 0.95)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("verification.json")
    report.save(out, extra={"checkpoint": str(args.checkpoint), "threshold": threshold,
                            "config": net.metadata.get("config"),
                            "eps_bar_note": "heuristic estimate, not a certificate"})
    print(f"pass_rate {report.pass_rate:.4f} (threshold {threshold}), worst eigenvalue "
          f"{report.worst_eigenvalue:.4g}, bc residual mean {report.bc_residual_mean:.4g}")
    print(f"report: {out}")
    return EXIT_OK if report.pass_rate >= threshold else EXIT_BELOW_THRESHOLD


def _cmd_simulate(args):
    net = network.load_checkpoint(args.checkpoint)
    system = _system_for(net, args.system)
    sim_cfg = default_sim_config(
        net, system, noise_sigma=args.noise, noise_seed=args.seed, t_final=args.t_final,
        dt=args.dt, x0=args.x0, xhat0=args.xhat0,
    )
    traj = simulate.simulate(system, net, sim_cfg)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name("trajectory.csv")
    header = json.dumps({"checkpoint": str(args.checkpoint), "sim": traj.config,
                         "config": net.metadata.get("config")}, sort_keys=True)
    traj.to_csv(out, header_comment=header)
    if traj.diagnostic:
        print(f"warning: {traj.diagnostic}", file=sys.stderr)
    print(f"final error norm {traj.err_norm[-1]:.6g}; trajectory: {out}")
    return EXIT_NUMERIC if traj.diagnostic else EXIT_OK


def _cmd_bench(args):
    out = Path(args.out_dir or Path("runs") / f"bench_{args.suite}")
    rows = run_bench(args.suite, out, seeds=args.seeds)
    print("system           lambda  mse%(mean)  std       ref     status")
    for r in rows:
        mean = "-" if r["mse_mean"] is None else f"{r['mse_mean']:.4g}"
        std = "-" if r["mse_std"] is None else f"{r['mse_std']:.3g}"
        print(f"{r['system']:<16} {r['lambda']:<7g} {mean:<11} {std:<9} "
              f"{r['reference_value'] if r['reference_value'] is not None else '-':<7} {r['status']}")
    print(f"table: {out / f'bench_{args.suite}.csv'}")
    failed = any(r["status"] != "ok" for r in rows)
    return EXIT_NUMERIC if failed else EXIT_OK


def _cmd_validate(args):
    report = systems.validate(systems.get_system(args.system), args.samples, args.seed)
    print(f"{report.name}: max relative Jacobian error {report.max_rel_error:.3g} over "
          f"{report.samples} points ({'ok' if report.ok else 'MISMATCH'})")
    return EXIT_OK if report.ok else EXIT_BELOW_THRESHOLD


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contraction-pinn",
        description="Learn and check neural contraction-observer gains.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count (1 gives bit-reproducible runs)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a gain from a config")
    p.add_argument("--config", required=True, help="YAML path or shipped config name")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("verify", help="grid-check a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-2)
    p.add_argument("--threshold", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--system")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("simulate", help="closed-loop run of plant and observer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int, help="noise seed")
    p.add_argument("--t-final", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--x0", type=float, nargs="+")
    p.add_argument("--xhat0", type=float, nargs="+")
    p.add_argument("--system")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("bench", help="noise-robustness table over contraction rates")
    p.add_argument("suite", nargs="?", default="full", choices=sorted(SUITES))
    p.add_argument("--seeds", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("validate-system", help="finite-difference check of a system Jacobian")
    p.add_argument("--system", required=True, choices=systems.available_systems())
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads(args.threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, optimize.TrainingError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
