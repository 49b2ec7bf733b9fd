"""Command-line entry point: ``mmgat <verb> [flags]``.

Exit codes: 0 success, 1 validation error, 2 numerical failure,
3 property-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .config import ConfigError, RunConfig
from .evaluate import evaluate_subsets
from .gradcheck import gradcheck
from .hetgat import HetGatConfig
from .oracle import verify
from .pipeline import ModelConfig, init_params, param_group, total_loss
from .synthetic import Dataset, generate_synthetic, load_dataset, save_dataset
from .topology import GraphSpec, ModalityMask
from .train import TrainingError, load_checkpoint, train

log = logging.getLogger("mmgat")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROPERTY = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# -- helpers ---------------------------------------------------------------------

def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> RunConfig:
    data = {}
    if args.config:
        data.update(RunConfig.load(args.config).to_dict())
    else:
        data.update(RunConfig().to_dict())
    for item in args.set or []:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        # string fields take the raw text, so lists like 0,1,2 need no quoting
        data[key] = value if isinstance(data.get(key), str) else _parse_value(value)
    if args.seed is not None:
        data["seed"] = args.seed
    return RunConfig.from_dict(data)


def prepare_out(path: str | None, force: bool, default: str) -> Path:
    out = Path(path or default)
    if out.exists() and any(out.iterdir()) and not force:
        raise CommandError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_for(cfg: RunConfig, data_dir: str | None) -> Dataset:
    if data_dir:
        ds = load_dataset(data_dir)
        if ds.config.num_modalities != cfg.num_modalities or ds.config.grid != cfg.grid \
                or ds.config.num_classes != cfg.num_classes:
            raise CommandError(f"dataset {data_dir} does not match the run configuration")
        return ds
    return generate_synthetic(cfg.data_config())


# -- verbs -----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    changes = {}
    if args.num_samples is not None:
        changes["num_samples"] = args.num_samples
    if args.noise is not None:
        changes["noise"] = args.noise
    if args.seed is not None:
        changes["data_seed"] = args.seed
    cfg = RunConfig.from_dict({**cfg.to_dict(), **changes})
    out = prepare_out(args.out, args.force, "data")
    ds = generate_synthetic(cfg.data_config())
    save_dataset(ds, out)
    cfg.save(out / "config.json")
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_verify_adjacency(args) -> int:
    if not 1 <= args.n <= 6:
        raise CommandError("verify-adjacency supports 1 <= N <= 6")
    spec = GraphSpec(args.n, args.c, args.cp, 1)
    corrupt = None
    if args.corrupt:
        r, c = (int(v) for v in args.corrupt.split(","))

        def corrupt(mask, adj):
            adj[r, c] = ~adj[r, c]
            return adj

    mismatches = verify(spec, corrupt=corrupt)
    n_masks = 2 ** args.n - 1
    if mismatches:
        first = mismatches[0]
        print(f"FAIL: {len(mismatches)}/{n_masks} masks differ; first mismatch mask "
              f"{first.mask.bits()} at ({first.row}, {first.col}): expected "
              f"{int(first.expected)}, got {int(first.got)}")
        return EXIT_PROPERTY
    print(f"PASS: N={args.n} C={args.c} C_p={args.cp}, {n_masks} masks, "
          f"{spec.num_nodes} nodes")
    return EXIT_OK


GRADCHECK_DEFAULT = dict(num_modalities=3, basic_per_modality=2, virtual_per_modality=1,
                         grid=6, patch=2, num_classes=3, enc_hidden=4, dec_hidden=5)


def gradcheck_instance(mask_mode: str, virtual: int = 1, seed: int = 0, soft_logit: float = -1e4,
                       mask: ModalityMask | None = None):
    """Default small instance: N=3, C=2, C_p=1, S=6 (F=9, 2x2 tiles), K=2, L=3."""
    model = ModelConfig(**{**GRADCHECK_DEFAULT, "virtual_per_modality": virtual},
                        gat=HetGatConfig(heads=2, mask_mode=mask_mode, soft_logit=soft_logit,
                                         init="glorot"))
    rng = np.random.default_rng(seed)
    params = init_params(model, rng)
    for m in range(model.num_modalities):
        params[f"p/{m}"] = rng.standard_normal(params[f"p/{m}"].shape)
    for name in params:
        if "/b" in name:
            params[name] = 0.1 * rng.standard_normal(params[name].shape)
    images = rng.random((model.num_modalities, model.grid, model.grid))
    labels = rng.integers(0, model.num_classes, (model.grid, model.grid))
    mask = mask or ModalityMask((True, False, True))
    return model, params, images, labels, mask


FD_DTYPES = {"extended": np.longdouble, "float64": np.float64}


def run_gradcheck(mask_mode: str, virtual: int = 1, seed: int = 0, h: float = 1e-6,
                  tol: float = 1e-6, mask: ModalityMask | None = None,
                  fd_precision: str = "extended"):
    model, params, images, labels, mask = gradcheck_instance(mask_mode, virtual, seed, mask=mask)
    return gradcheck(lambda p: total_loss(images, labels, mask, p, model).total,
                     params, h=h, tol=tol, fd_dtype=FD_DTYPES[fd_precision])


def cmd_gradcheck(args) -> int:
    modes = ["soft", "hard"] if args.mask_mode == "both" else [args.mask_mode]
    ok = True
    for mode in modes:
        t0 = time.time()
        report = run_gradcheck(mode, virtual=args.cp, seed=args.seed or 0, h=args.h, tol=args.tol,
                               fd_precision=args.fd_precision)
        groups = report.by_group(param_group)
        for g in sorted(groups):
            print(f"{mode:4s} {g:7s} max rel err {groups[g]:.3e}")
        status = "PASS" if report.passed else "FAIL"
        print(f"{mode:4s} {status} ({report.entries_checked} entries, {time.time() - t0:.1f}s)")
        ok &= report.passed
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = prepare_out(args.out, args.force, "runs/train")
    ds = _dataset_for(cfg, args.data)
    cfg.save(out / "config.json")
    t0 = time.time()
    result = train(cfg.model_config(), cfg.train_config(), ds, out_dir=out)
    last = result.epochs[-1] if result.epochs else {}
    print(f"trained {cfg.steps} steps in {time.time() - t0:.1f}s; "
          f"last epoch loss {last.get('total', float('nan')):.4f}; checkpoint {out / 'final'}")
    return EXIT_OK


def load_run(run_dir: str | Path) -> tuple[RunConfig, dict[str, np.ndarray]]:
    run = Path(run_dir)
    ckpt = run / "final" if (run / "final").is_dir() else run
    cfg_path = run / "config.json" if (run / "config.json").exists() else ckpt.parent / "config.json"
    cfg = RunConfig.load(cfg_path)
    params, _ = load_checkpoint(ckpt)
    return cfg, params


def cmd_eval(args) -> int:
    cfg, params = load_run(args.checkpoint)
    if args.data:
        ds = _dataset_for(cfg, args.data)
    else:
        ds = generate_synthetic(cfg.data_config(seed=cfg.eval_seed, num_samples=cfg.eval_samples))
    model = cfg.model_config()
    expected = set(init_params(model, np.random.default_rng(0)))
    if set(params) != expected:
        raise CommandError("checkpoint tensors do not match the configured model")
    out = prepare_out(args.out, args.force, str(Path(args.checkpoint) / "eval"))
    report = evaluate_subsets(params, model, ds, static_graph=cfg.static_full_graph)
    report.write(out)
    cfg.save(out / "config.json")
    print(report.to_text())
    return EXIT_OK


def run_variant(cfg: RunConfig, train_ds: Dataset, eval_ds: Dataset, out: Path | None = None):
    result = train(cfg.model_config(), cfg.train_config(), train_ds, out_dir=out)
    report = evaluate_subsets(result.params, cfg.model_config(), eval_ds,
                              static_graph=cfg.static_full_graph)
    if out is not None:
        report.write(out)
        cfg.save(out / "config.json")
    return report


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    out = prepare_out(args.out, args.force, "runs/ablate")
    base.save(out / "config.json")
    train_ds = generate_synthetic(base.data_config())
    eval_ds = generate_synthetic(base.data_config(seed=base.eval_seed,
                                                  num_samples=base.eval_samples))
    if args.mode == "length":
        variants = {f"length_{n}": replace(base, virtual_per_modality=n, no_virtual=False)
                    for n in base.lengths()}
    else:
        variants = {name: base.variant(name) for name in base.variants()}

    results: dict[str, dict[int, dict]] = {}
    for name, vcfg in variants.items():
        results[name] = {}
        for seed in base.seeds():
            scfg = replace(vcfg, seed=seed)
            report = run_variant(scfg, train_ds, eval_ds, out / name / f"seed_{seed}")
            results[name][seed] = {"missing_mean": report.missing_subset_mean(),
                                   "full": report.rows[-1].mean, "mean": report.grand_mean}
            print(f"{name:22s} seed {seed}: missing-subset Dice "
                  f"{results[name][seed]['missing_mean']:.4f}  all-subset "
                  f"{results[name][seed]['mean']:.4f}")

    summary = {"mode": args.mode, "variants": {}}
    lines = ["variant,seed,missing_mean,full,mean"]
    for name, per_seed in results.items():
        vals = [r["missing_mean"] for r in per_seed.values()]
        summary["variants"][name] = {"per_seed": per_seed, "missing_mean_avg": float(np.mean(vals)),
                                     "missing_mean_std": float(np.std(vals))}
        for seed, r in per_seed.items():
            lines.append(f"{name},{seed},{r['missing_mean']:.6f},{r['full']:.6f},{r['mean']:.6f}")
    if args.mode == "length":
        avgs = {name: v["missing_mean_avg"] for name, v in summary["variants"].items()}
        best = max(avgs, key=avgs.get)
        summary["best"] = best
        summary["best_not_largest"] = best != list(avgs)[-1]
        print(f"best length variant: {best} (largest is {list(avgs)[-1]})")
    elif "full" in results and "no_virtual" in results:
        wins = sum(results["full"][s]["missing_mean"] >= results["no_virtual"][s]["missing_mean"]
                   for s in base.seeds())
        summary["full_ge_no_virtual_seeds"] = wins
        print(f"full >= no_virtual in {wins}/{len(base.seeds())} seeds")
    (out / "ablation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="allow a non-empty --out")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (value parsed as JSON)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mmgat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    p.add_argument("--num-samples", type=int)
    p.add_argument("--noise", type=float)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("verify-adjacency", parents=[common],
                       help="check the adjacency builder against the rule oracle")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--c", type=int, default=2)
    p.add_argument("--cp", type=int, default=1)
    p.add_argument("--corrupt", metavar="ROW,COL", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify_adjacency)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--mask-mode", choices=["soft", "hard", "both"], default="both")
    p.add_argument("--cp", type=int, default=1)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--fd-precision", choices=sorted(FD_DTYPES), default="extended",
                   help="arithmetic for the difference quotients (gradients are always float64)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", help="dataset directory (default: generate from config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="Dice over all modality subsets")
    p.add_argument("--checkpoint", required=True, help="run directory from `train`")
    p.add_argument("--data", help="dataset directory (default: held-out set from config)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and compare variants")
    p.add_argument("--mode", choices=["variants", "length"], default="variants")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors as 2, which is reserved for numerical failures
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CommandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "code", EXIT_CONFIG)
    except (TrainingError, NonFiniteError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
