"""Command-line entry point: ``learnless <subcommand> [flags]``.

Every run writes its artifacts plus a ``manifest.json`` into the output
directory. The manifest holds the resolved arguments, seed, library versions
and content hashes of inputs and outputs. ``learnless rerun manifest.json``
replays a run and, with ``--check``, compares the replayed metric logs byte for
byte.

Flag precedence: explicit flag > ``--config`` INI section > profile > built-in
default. The INI file has a ``[global]`` section and one section per
subcommand (``[train]``, ``[gen-mask]`` ...); keys are flag names with dashes
or underscores.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .data import (LABEL_REAL, GenImageDir, SyntheticBenchmark, default_benchmark, list_subsets, read_image,
                   write_image, write_synthetic_dataset)
from .evaluation import cross_subset_matrix, export_features, stability_report, write_records
from .masking import FormulaVariant, MaskConfig, random_mask, save_mask_pgm
from .nngrad import TrainingError
from .nngrad.checkpoint import load_checkpoint
from .nngrad.gradcheck import run_suite
from .perturb import PerturbKind, PerturbSpec, perturbation_chain
from .rng import stream_seed
from .trainer import Mode, TrainConfig, ablation_run, ablation_table, pretrain, train

log = logging.getLogger("learnless")

ENV_OUT_DIR = "LOL_OUT_DIR"
MANIFEST = "manifest.json"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".pgm", ".tif", ".tiff", ".webp"}

PROFILES = {
    "desk": {"lr": 1e-4, "crop": 64, "batch_size": 4, "epochs": 20},
    "paper": {"lr": 5e-6, "crop": 224, "batch_size": 4, "epochs": 20},
}

# files whose bytes define a run's metric log (compared by `rerun --check`)
METRIC_FILES = ("metrics.jsonl", "stability.json", "matrix.jsonl", "ablation.jsonl", "gradcheck.json",
                "pretrain.jsonl", "features.csv")


class CliError(Exception):
    """A user-facing failure: printed without a traceback, exit code 1."""


# ------------------------------------------------------------------ parsing helpers

def float_range(text: str) -> tuple[float, float]:
    """``"0.6,0.8"`` -> (0.6, 0.8); a single number means a degenerate range."""
    parts = [p for p in str(text).replace(" ", "").split(",") if p]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi' or a number, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi' or a number, got {text!r}")
    return vals[0], vals[1]


def range_grid(text: str) -> list[tuple[float, float]]:
    """``"0.2,0.4;0.6,0.8"`` -> [(0.2, 0.4), (0.6, 0.8)]."""
    return [float_range(chunk) for chunk in str(text).split(";") if chunk.strip()]


def name_list(text: str) -> list[str]:
    return [p.strip() for p in str(text).split(",") if p.strip()]


def int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in name_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def model_pair(text: str) -> tuple[str, str]:
    subset, sep, path = str(text).partition("=")
    if not sep or not subset or not path:
        raise argparse.ArgumentTypeError(f"expected SUBSET=CHECKPOINT, got {text!r}")
    return subset, path


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


# ------------------------------------------------------------------ hashing and manifest

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def hash_tree(root: Path, files: Optional[Sequence[Path]] = None) -> str:
    """One digest over (relative path, content hash) of every file, in sorted order."""
    root = Path(root)
    files = sorted(p for p in root.rglob("*") if p.is_file()) if files is None else sorted(files)
    h = hashlib.sha256()
    for p in files:
        h.update(str(Path(p).relative_to(root)).encode())
        h.update(sha256_file(Path(p)).encode())
    return h.hexdigest()


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def versions() -> dict:
    import PIL
    return {"learnless": __version__, "numpy": np.__version__, "pillow": PIL.__version__,
            "python": platform.python_version()}


def write_manifest(out_dir: Path, command: str, args: dict, inputs: dict[str, str]) -> Path:
    outputs = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            outputs[str(p.relative_to(out_dir))] = sha256_file(p)
    manifest = {
        "tool": "learnless",
        "command": command,
        "seed": args.get("seed"),
        "args": _jsonable(args),
        "versions": versions(),
        "inputs": inputs,
        "outputs": outputs,
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ------------------------------------------------------------------ data helpers

def _load_dir(root, subset, split, fraction=None, seed=0, real_only=False):
    src = GenImageDir(root, subset, split, fraction, seed)
    files = [p for p, label in src.files if not real_only or label == LABEL_REAL]
    samples = [s for s in src if not real_only or s.label == LABEL_REAL]
    if src.skipped:
        log.warning("skipped %d undecodable images in %s", src.skipped, src.base)
    return samples, files


def _subsets(root, wanted) -> list[str]:
    return list(wanted) if wanted else list_subsets(root)


def _mask_config(args) -> MaskConfig:
    return MaskConfig(tuple(args.r_mask), tuple(args.r_aspect), FormulaVariant(args.variant))


def _train_config(args, mode: Mode) -> TrainConfig:
    return TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, crop=args.crop,
                       seed=args.seed, mode=mode, mask_config=_mask_config(args),
                       eval_every_steps=args.eval_every_steps, augment=not args.no_augment)


def _load_init(path):
    if not path:
        return None
    path = Path(path)
    if not path.is_file():
        raise CliError(f"checkpoint not found: {path}")
    params, _ = load_checkpoint(path)
    return params


def _write_jsonl(path: Path, records) -> None:
    write_records(path, [_jsonable(r) for r in records])


# ------------------------------------------------------------------ subcommands
# Each returns (exit code, {input name: digest}).

def cmd_gen_mask(args, out: Path):
    cfg = MaskConfig(tuple(args.r_mask), tuple(args.r_aspect), FormulaVariant(args.variant))
    for i in range(args.count):
        mask = random_mask(args.h, args.w, cfg, stream_seed(args.seed, i))
        save_mask_pgm(mask, out / f"mask_{i:04d}.pgm")
        log.info("mask %d: %d of %d pixels zeroed", i, int(mask.size - mask.sum()), mask.size)
    return 0, {}


def _perturb_specs(args) -> list[PerturbSpec]:
    ranges = {"noise": args.noise_range, "blur": args.blur_kernels, "jpeg": args.jpeg_range, "crop": args.crop_range}
    specs = []
    for kind in args.kind:
        if kind not in ranges:
            raise CliError(f"unknown perturbation kind {kind!r}; choose from noise, blur, jpeg, crop")
        rng_ = ranges[kind]
        specs.append(PerturbSpec(PerturbKind(kind), tuple(rng_) if rng_ is not None else None,
                                 noise_as_sigma=args.noise_as_sigma))
    return specs


def cmd_perturb(args, out: Path):
    src = Path(args.in_dir)
    if not src.is_dir():
        raise CliError(f"input directory not found: {src}")
    specs = _perturb_specs(args)
    files = sorted(p for p in src.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise CliError(f"no images found under {src}")
    for i, path in enumerate(files):
        image = read_image(path)
        result = perturbation_chain(image, specs, stream_seed(args.seed, i))
        rel = path.relative_to(src).with_suffix(".png")
        target = out / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        write_image(target, result)
    log.info("perturbed %d images with %s", len(files), ",".join(args.kind) or "identity")
    return 0, {"in_dir": hash_tree(src, files)}


def cmd_synth_data(args, out: Path):
    base = default_benchmark(args.size)
    gens = [g for g in base.generators if not args.generators or g.generator_id in args.generators]
    missing = set(args.generators or ()) - {g.generator_id for g in gens}
    if missing:
        raise CliError(f"unknown generator ids: {sorted(missing)}; available {base.subset_ids}")
    bench = SyntheticBenchmark(gens, base.common, args.size)
    write_synthetic_dataset(out, bench, args.n_per_class, args.seed, args.splits)
    log.info("wrote %d generators x %d images per class", len(gens), args.n_per_class)
    return 0, {}


def cmd_pretrain(args, out: Path):
    samples, files = [], []
    for subset in _subsets(args.data_root, args.subsets):
        s, f = _load_dir(args.data_root, subset, args.split, real_only=True)
        samples += s
        files += f
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, crop=args.crop,
                      seed=args.seed, mode=Mode.PRETRAIN, noise_std=args.noise_std, augment=not args.no_augment)
    result = pretrain(cfg, samples)
    result.checkpoint.save(out / "pretrained.npz")
    _write_jsonl(out / "pretrain.jsonl", result.log)
    return 0, {"data_root": hash_tree(Path(args.data_root), files)}


def cmd_train(args, out: Path):
    mode = Mode(args.mode)
    if mode is Mode.PRETRAIN:
        raise CliError("use the 'pretrain' subcommand for the denoising warm start")
    train_data, files = _load_dir(args.data_root, args.subset, "train", args.fraction, args.seed)
    eval_sets = {}
    for subset in _subsets(args.data_root, args.eval_subsets):
        eval_sets[subset], f = _load_dir(args.data_root, subset, args.eval_split)
        files += f
    cfg = _train_config(args, mode)
    init = _load_init(args.init)
    metrics = out / "metrics.jsonl"
    with open(metrics, "w") as fh:
        sink = lambda rec: fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
        result = train(cfg, train_data, eval_sets, init=init, out_dir=out / "checkpoints", log_sink=sink)
    if len(result.checkpoints) >= 5 and eval_sets and cfg.epochs >= 5:
        rep = stability_report(result.last(5), eval_sets, cfg.crop, args.subset)
        (out / "stability.json").write_text(json.dumps(rep.to_record(), sort_keys=True) + "\n")
        print(rep.to_table_row())
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")
    inputs = {"data_root": hash_tree(Path(args.data_root), files)}
    if args.init:
        inputs["init"] = sha256_file(Path(args.init))
    return 0, inputs


def cmd_eval_matrix(args, out: Path):
    if not args.model:
        raise CliError("eval-matrix needs at least one --model SUBSET=CHECKPOINT")
    checkpoints, inputs = {}, {}
    for subset, path in args.model:
        checkpoints[subset] = _load_init(path)
        inputs[f"model:{subset}"] = sha256_file(Path(path))
    test_sets, files = {}, []
    for subset in _subsets(args.data_root, args.test_subsets):
        test_sets[subset], f = _load_dir(args.data_root, subset, args.split)
        files += f
    matrix = cross_subset_matrix(checkpoints, test_sets, args.crop)
    _write_jsonl(out / "matrix.jsonl", matrix.to_records())
    table = "ACC (%)\n" + matrix.to_table("acc") + "\n\nAP (%)\n" + matrix.to_table("ap") + "\n"
    (out / "matrix.txt").write_text(table)
    print(table, end="")
    inputs["data_root"] = hash_tree(Path(args.data_root), files)
    return 0, inputs


def cmd_ablate(args, out: Path):
    grid = [MaskConfig(rm, ra, FormulaVariant(args.variant)) for rm in args.r_mask_grid for ra in args.r_aspect_grid]
    train_data, files = _load_dir(args.data_root, args.subset, "train", args.fraction, args.seed)
    test_sets = {}
    for subset in _subsets(args.data_root, args.eval_subsets):
        test_sets[subset], f = _load_dir(args.data_root, subset, args.eval_split)
        files += f
    cfg = _train_config(args, Mode.LOL)
    cfg.eval_every_steps = 0
    cells = ablation_run(grid, cfg, train_data, test_sets, init=_load_init(args.init), train_subset=args.subset)
    _write_jsonl(out / "ablation.jsonl", [vars(c) for c in cells])
    table = ablation_table(cells) + "\n"
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return 0, {"data_root": hash_tree(Path(args.data_root), files)}


def cmd_gradcheck(args, out: Path):
    results = run_suite(args.trials, args.seed)
    for r in results:
        print(r.line())
    records = [{"name": r.name, "trials": r.trials, "max_rel_error": r.max_rel_error,
                "tolerance": r.tolerance, "passed": r.passed} for r in results]
    (out / "gradcheck.json").write_text(json.dumps(records, sort_keys=True, indent=2) + "\n")
    return (0 if all(r.passed for r in results) else 1), {}


def cmd_export_features(args, out: Path):
    params = _load_init(args.checkpoint)
    samples, files = [], []
    for subset in _subsets(args.data_root, args.subsets):
        s, f = _load_dir(args.data_root, subset, args.split)
        samples += s
        files += f
    export_features(params, samples, out / "features.csv", args.crop)
    return 0, {"checkpoint": sha256_file(Path(args.checkpoint)),
               "data_root": hash_tree(Path(args.data_root), files)}


COMMANDS: dict[str, Callable] = {
    "gen-mask": cmd_gen_mask,
    "perturb": cmd_perturb,
    "synth-data": cmd_synth_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval-matrix": cmd_eval_matrix,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "export-features": cmd_export_features,
}

# flags whose default depends on --profile
PROFILE_FLAGS = ("lr", "crop", "batch_size", "epochs")


# ------------------------------------------------------------------ parser

def _add_training_flags(p: argparse.ArgumentParser, masks: bool = True):
    p.add_argument("--data-root", required=True, help="GenImage-style root: SUBSET/{train,val}/{real,ai}")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                   help="default lr/crop/batch/epochs: desk (1e-4, 64, 4, 20) or paper (5e-6, 224, 4, 20)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=_nonneg_int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--no-augment", action="store_true", help="disable flip and rotation")
    p.add_argument("--init", default=None, help="checkpoint to start from (e.g. pretrained.npz)")
    if masks:
        p.add_argument("--r-mask", type=float_range, default=(0.6, 0.8), help="masked-ratio range (default 0.6,0.8)")
        p.add_argument("--r-aspect", type=float_range, default=(0.33, 3.0),
                       help="aspect-ratio range (default 0.33,3.0)")
        p.add_argument("--variant", choices=[v.value for v in FormulaVariant], default="corrected")
        p.add_argument("--fraction", type=float, default=None, help="seeded per-class sampling fraction")
        p.add_argument("--eval-subsets", type=name_list, default=None, help="comma list (default: all)")
        p.add_argument("--eval-split", choices=["train", "val"], default="val")
        p.add_argument("--eval-every-steps", type=_nonneg_int, default=400)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnless", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"learnless {__version__}")
    parser.add_argument("--seed", type=_nonneg_int, default=0, help="base seed (default 0)")
    parser.add_argument("--config", default=None, help="INI file with [global] and per-subcommand sections")
    parser.add_argument("--out-dir", default=None, help=f"artifact directory (default ${ENV_OUT_DIR} or runs/<cmd>)")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-mask", help="write random rectangle masks as PGM images")
    p.add_argument("--h", type=int, default=224)
    p.add_argument("--w", type=int, default=224)
    p.add_argument("--r-mask", type=float_range, default=(0.6, 0.8), help="value or 'lo,hi' range")
    p.add_argument("--r-aspect", type=float_range, default=(0.33, 3.0), help="value or 'lo,hi' range")
    p.add_argument("--variant", choices=[v.value for v in FormulaVariant], default="corrected")
    p.add_argument("--count", type=int, default=1)

    p = sub.add_parser("perturb", help="apply a seeded perturbation chain to every image under a directory")
    p.add_argument("in_dir")
    p.add_argument("out_dir_pos", nargs="?", default=None, metavar="out_dir", help="overrides --out-dir")
    p.add_argument("--kind", type=name_list, default=["noise"], help="comma list in application order")
    p.add_argument("--noise-range", type=float_range, default=None, help="variance range (default 5,20)")
    p.add_argument("--blur-kernels", type=int_list, default=None, help="kernel set (default 3,5,7,9)")
    p.add_argument("--jpeg-range", type=float_range, default=None, help="quality range (default 10,75)")
    p.add_argument("--crop-range", type=float_range, default=None, help="crop fraction range (default 0.05,0.2)")
    p.add_argument("--noise-as-sigma", action="store_true", help="read the noise parameter as a std")

    p = sub.add_parser("synth-data", help="write the synthetic cross-generator benchmark")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--splits", type=name_list, default=["train", "val"])
    p.add_argument("--generators", type=name_list, default=None, help="subset of gen_a,gen_b,gen_c,gen_d")

    p = sub.add_parser("pretrain", help="denoising warm start of the conv trunk on real images only")
    _add_training_flags(p, masks=False)
    p.add_argument("--subsets", type=name_list, default=None, help="subsets whose real images are used")
    p.add_argument("--split", choices=["train", "val"], default="train")
    p.add_argument("--noise-std", type=float, default=0.5)

    p = sub.add_parser("train", help="train a detector (LoL masking or unmasked baseline)")
    _add_training_flags(p)
    p.add_argument("--subset", required=True)
    p.add_argument("--mode", choices=[Mode.LOL.value, Mode.BASELINE.value], default=Mode.LOL.value)

    p = sub.add_parser("eval-matrix", help="evaluate trained models on every test subset")
    p.add_argument("--data-root", required=True)
    p.add_argument("--model", type=model_pair, action="append", default=None, help="SUBSET=CHECKPOINT, repeatable")
    p.add_argument("--test-subsets", type=name_list, default=None)
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.add_argument("--crop", type=int, default=64)

    p = sub.add_parser("ablate", help="grid over masked-ratio and aspect-ratio ranges")
    _add_training_flags(p)
    p.add_argument("--subset", required=True)
    p.add_argument("--r-mask-grid", type=range_grid, default=range_grid("0.2,0.4;0.4,0.6;0.6,0.8"))
    p.add_argument("--r-aspect-grid", type=range_grid, default=range_grid("1,1;0.33,3"))

    p = sub.add_parser("gradcheck", help="finite-difference checks of every backward pass")
    p.add_argument("--trials", type=int, default=100)

    p = sub.add_parser("export-features", help="write trunk features as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--subsets", type=name_list, default=None)
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.add_argument("--crop", type=int, default=64)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--check", action="store_true", help="fail unless metric logs match the original bytes")
    return parser


def _config_defaults(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, path: str, command: str):
    """Turn INI values into parser defaults; argparse then applies each flag's type."""
    if not Path(path).is_file():
        raise CliError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    for section, target in (("global", parser), (command, sub)):
        if not cp.has_section(section):
            continue
        actions = {a.dest: a for a in target._actions}
        values = {}
        for key, raw in cp.items(section):
            dest = key.replace("-", "_")
            if dest not in actions or dest in ("help", "command", "config"):
                raise CliError(f"unknown key {key!r} in section [{section}] of {path}")
            action = actions[dest]
            if isinstance(action, argparse._StoreTrueAction):
                values[dest] = cp.getboolean(section, key)
            else:
                values[dest] = action.type(raw) if action.type else raw
        target.set_defaults(**values)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre, _ = parser.parse_known_args(argv)
    if pre.config and pre.command in COMMANDS:
        sub = parser._subparsers._group_actions[0].choices[pre.command]
        _config_defaults(parser, sub, pre.config, pre.command)
    args = parser.parse_args(argv)
    if getattr(args, "profile", None):
        for name in PROFILE_FLAGS:
            if getattr(args, name, None) is None:
                setattr(args, name, PROFILES[args.profile][name])
    return args


def _out_dir(args) -> Path:
    chosen = getattr(args, "out_dir_pos", None) or args.out_dir or os.environ.get(ENV_OUT_DIR)
    out = Path(chosen) if chosen else Path("runs") / args.command
    return out.resolve()


def _absolute_paths(args: argparse.Namespace) -> None:
    for name in ("data_root", "init", "checkpoint", "in_dir", "config"):
        if getattr(args, name, None):
            setattr(args, name, str(Path(getattr(args, name)).resolve()))
    if getattr(args, "model", None):
        args.model = [(s, str(Path(p).resolve())) for s, p in args.model]


def execute(args: argparse.Namespace) -> int:
    """Run one parsed command, then write its manifest. Returns the exit code."""
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    args.out_dir, args.out_dir_pos = str(out), None
    _absolute_paths(args)
    t0 = time.perf_counter()
    log.info("running %s into %s", args.command, out)
    code, inputs = COMMANDS[args.command](args, out)
    resolved = {k: v for k, v in vars(args).items() if k not in ("log_level",)}
    write_manifest(out, args.command, resolved, inputs)
    log.info("%s finished in %.1fs with exit code %d", args.command, time.perf_counter() - t0, code)
    return code


def _namespace_from_manifest(manifest: dict) -> argparse.Namespace:
    args = dict(manifest["args"])
    for key in ("r_mask", "r_aspect", "noise_range", "jpeg_range", "crop_range"):
        if args.get(key) is not None:
            args[key] = tuple(args[key])
    for key in ("r_mask_grid", "r_aspect_grid", "model"):
        if args.get(key) is not None:
            args[key] = [tuple(v) for v in args[key]]
    return argparse.Namespace(**args)


def rerun(manifest_path: str, out_dir: Optional[str], check: bool) -> int:
    path = Path(manifest_path)
    if not path.is_file():
        raise CliError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    if manifest.get("tool") != "learnless" or manifest.get("command") not in COMMANDS:
        raise CliError(f"{path} is not a learnless run manifest")
    args = _namespace_from_manifest(manifest)
    if manifest["versions"] != versions():
        log.warning("library versions differ from the recorded run: %s vs %s", manifest["versions"], versions())
    original = path.parent
    target = Path(out_dir).resolve() if out_dir else Path(str(original) + "-rerun")
    if target == original.resolve():
        raise CliError("rerun output directory must differ from the original run")
    args.out_dir = str(target)
    code = execute(args)
    if not check:
        return code
    mismatched = []
    for name in METRIC_FILES:
        a, b = original / name, target / name
        if a.exists() != b.exists() or (a.exists() and a.read_bytes() != b.read_bytes()):
            mismatched.append(name)
    for name in mismatched:
        log.error("metric log %s differs from the original run", name)
    if not mismatched:
        log.info("metric logs identical to %s", original)
    return code if not mismatched else 1


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps({"time": round(record.created, 3), "level": record.levelname, "logger": record.name,
                           "msg": record.getMessage()})


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except CliError as exc:
        print(f"learnless: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    _setup_logging(args.log_level)
    try:
        if args.command == "rerun":
            return rerun(args.manifest, args.out_dir or os.environ.get(ENV_OUT_DIR), args.check)
        return execute(args)
    except (CliError, ValueError, FileNotFoundError, KeyError, TrainingError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"learnless: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
