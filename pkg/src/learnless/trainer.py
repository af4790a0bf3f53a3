"""Training loops: masked (LoL) and unmasked detector training, and the
denoising-autoencoder warm start that stands in for large-scale pretraining.

Per training step and image: preprocess -> sample ratios -> build mask ->
multiply -> forward. The mask, augmentation and shuffle streams each derive
their own seeds, so switching masking off leaves every other draw unchanged.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .data import LABEL_REAL, Sample, preprocess_train
from .evaluation import evaluate_sets, mean_metrics, stability_report
from .masking import MaskConfig, apply_mask, random_mask
from .nngrad import AdamState, ModelParams, TrainingError, adam_step, build_layers, build_small_cnn, init_params
from .nngrad import ops
from .nngrad.checkpoint import save_checkpoint
from .rng import make_rng, stream_seed

log = logging.getLogger(__name__)

# stream ids for seed derivation
_SHUFFLE, _PREP, _MASK, _INIT, _NOISE = 11, 12, 13, 14, 15


class Mode(str, Enum):
    LOL = "lol"
    BASELINE = "baseline_unmasked"
    PRETRAIN = "pretrain"


@dataclass
class TrainConfig:
    lr: float = 5e-6
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 4
    epochs: int = 20
    mask_config: MaskConfig = field(default_factory=MaskConfig)
    mode: Mode = Mode.LOL
    eval_every_steps: int = 400
    crop: int = 224
    seed: int = 0
    augment: bool = True
    freeze_trunk: bool = False
    # denoising warm start only
    noise_std: float = 0.5

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if isinstance(self.mask_config, Mapping):
            self.mask_config = MaskConfig(**self.mask_config)
        self.betas = tuple(float(b) for b in self.betas)
        if not self.lr >= 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.eval_every_steps < 0:
            raise ValueError("eval_every_steps must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["betas"] = list(self.betas)
        d["mask_config"] = {
            "r_mask_range": list(self.mask_config.r_mask_range),
            "r_aspect_range": list(self.mask_config.r_aspect_range),
            "formula_variant": self.mask_config.formula_variant.value,
        }
        return d

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def paper_profile(**overrides) -> TrainConfig:
    """Full-scale settings: 224 crops, lr 5e-6, batch 4, 20 epochs."""
    return TrainConfig(**{"lr": 5e-6, "crop": 224, "batch_size": 4, "epochs": 20, **overrides})


def desk_profile(**overrides) -> TrainConfig:
    """Desk-scale settings for the synthetic benchmark."""
    return TrainConfig(**{"lr": 1e-4, "crop": 64, "batch_size": 4, "epochs": 20, **overrides})


@dataclass
class Checkpoint:
    params: ModelParams
    epoch: int
    step: int
    config_hash: str

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.params, {"epoch": self.epoch, "step": self.step,
                                                   "config_hash": self.config_hash})


@dataclass
class TrainResult:
    checkpoints: list[Checkpoint]
    log: list[dict]

    @property
    def final(self) -> ModelParams:
        return self.checkpoints[-1].params

    def last(self, n: int = 5) -> list[Checkpoint]:
        return self.checkpoints[-n:]

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.log if "loss" in r]


def make_batch(samples: Sequence[Sample], config: TrainConfig, step: int, masked: bool) -> np.ndarray:
    """Preprocessed (and for LoL, masked) training tensors for one step."""
    xs = []
    for j, s in enumerate(samples):
        x = preprocess_train(s.image, config.crop, stream_seed(config.seed, _PREP, step, j), config.augment)
        if masked:
            m = random_mask(x.shape[1], x.shape[2], config.mask_config, stream_seed(config.seed, _MASK, step, j))
            x = apply_mask(x, m)
        xs.append(x)
    return np.stack(xs)


def _emit(record: dict, sink: Optional[Callable[[dict], None]], records: list):
    records.append(record)
    if sink is not None:
        sink(record)


def train(config: TrainConfig, train_data: Sequence[Sample],
          eval_sets: Optional[Mapping[str, Sequence[Sample]]] = None,
          init: Optional[ModelParams] = None, arch: Optional[list[dict]] = None,
          out_dir: Optional[str | Path] = None, log_sink: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train a detector; returns one checkpoint per epoch plus the metric log.

    ``init`` supplies starting weights (e.g. a warm-started trunk); otherwise a
    fresh network is drawn from the config seed.
    """
    if config.mode is Mode.PRETRAIN:
        raise ValueError("use pretrain() for the denoising warm start")
    train_data = list(train_data)
    if not train_data:
        raise ValueError("training data is empty")
    eval_sets = eval_sets or {}
    if init is None:
        params = build_small_cnn(arch, rng=stream_seed(config.seed, _INIT), lr=config.lr)
    else:
        params = init.copy()
        params.lr = config.lr
    params.betas, params.eps = config.betas, config.eps
    masked = config.mode is Mode.LOL
    frozen = set(params.trunk_param_names()) if config.freeze_trunk else set()
    chash = config.hash()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    records: list[dict] = []
    checkpoints: list[Checkpoint] = []
    step = 0
    n = len(train_data)
    for epoch in range(config.epochs):
        order = make_rng(stream_seed(config.seed, _SHUFFLE, epoch)).permutation(n)
        for start in range(0, n, config.batch_size):
            batch = [train_data[i] for i in order[start:start + config.batch_size]]
            x = make_batch(batch, config, step, masked)
            y = np.array([s.label for s in batch], dtype=np.float64)
            loss, grads, _ = params.loss_and_grads(x, y)
            if not np.isfinite(loss):
                _diagnose(out, params, x, y, step)
                raise TrainingError(f"non-finite loss at step {step} (epoch {epoch})")
            for name in frozen:
                grads.pop(name, None)
            params = adam_step(params, grads)
            step += 1
            _emit({"step": step, "epoch": epoch, "loss": loss}, log_sink, records)
            if config.eval_every_steps and eval_sets and step % config.eval_every_steps == 0:
                _emit({"step": step, "epoch": epoch, "eval": evaluate_sets(params, eval_sets, config.crop)},
                      log_sink, records)
        ckpt = Checkpoint(params.copy(), epoch, step, chash)
        checkpoints.append(ckpt)
        if out is not None:
            ckpt.save(out / f"ckpt_epoch{epoch:03d}.npz")
        if config.epochs and epoch == config.epochs - 1 and eval_sets:
            _emit({"step": step, "epoch": epoch, "eval": evaluate_sets(params, eval_sets, config.crop),
                   "final": True}, log_sink, records)
    if not checkpoints:
        checkpoints.append(Checkpoint(params.copy(), -1, 0, chash))
        if out is not None:
            checkpoints[-1].save(out / "ckpt_init.npz")
    return TrainResult(checkpoints, records)


def _diagnose(out: Optional[Path], params: ModelParams, x, y, step: int):
    if out is None:
        log.error("non-finite loss at step %d", step)
        return
    path = out / f"diagnostic_step{step}.npz"
    np.savez(path, x=x, y=y, **{f"param/{k}": v for k, v in params.params.items()})
    log.error("non-finite loss at step %d; snapshot written to %s", step, path)


# ------------------------------------------------------------------ warm start

def decoder_arch(trunk_arch: Sequence[dict], in_channels: int) -> list[dict]:
    """Mirror of the trunk: one upsample+conv+activation per pooling stage, then a 1x1 conv to pixels."""
    widths = [int(s["out"]) for s in trunk_arch if s["type"] == "conv"]
    n_pool = sum(1 for s in trunk_arch if s["type"] == "pool")
    act = next((s["fn"] for s in trunk_arch if s["type"] == "act"), "silu")
    dec: list[dict] = []
    rev = list(reversed(widths))
    for i in range(n_pool):
        ch = rev[min(i + 1, len(rev) - 1)]
        dec += [{"type": "upsample", "factor": 2},
                {"type": "conv", "out": ch, "kernel": 3, "stride": 1, "padding": 1},
                {"type": "act", "fn": act}]
    dec.append({"type": "conv", "out": in_channels, "kernel": 1, "stride": 1, "padding": 0})
    return dec


def autoencoder_from(classifier: ModelParams, rng) -> ModelParams:
    trunk = classifier.arch[:classifier.trunk_size]
    arch = copy.deepcopy(trunk) + decoder_arch(trunk, classifier.in_channels)
    layers, _ = build_layers(arch, classifier.in_channels)
    params = init_params(layers, rng)
    for name in classifier.trunk_param_names():
        params[name] = classifier.params[name].copy()
    return ModelParams(arch=arch, in_channels=classifier.in_channels, params=params, lr=classifier.lr)


def reconstruction_mse(ae: ModelParams, samples: Sequence[Sample], crop: int, noise_std: float,
                       seed: int = 0) -> float:
    """Mean denoising error of an autoencoder on held-out real images."""
    from .data import preprocess_eval

    errs = []
    for i, s in enumerate(samples):
        x = preprocess_eval(s.image, crop)[None]
        noisy = x + make_rng(stream_seed(seed, _NOISE, i)).normal(0.0, noise_std, x.shape)
        recon, _ = ae.forward(noisy)
        errs.append(np.mean((recon - x) ** 2))
    return float(np.mean(errs))


@dataclass
class PretrainResult:
    checkpoint: Checkpoint
    autoencoder: ModelParams
    log: list[dict]


def pretrain(config: TrainConfig, real_only_data: Sequence[Sample], arch: Optional[list[dict]] = None,
             init: Optional[ModelParams] = None, log_sink: Optional[Callable[[dict], None]] = None) -> PretrainResult:
    """Warm-start the conv trunk as a denoising autoencoder on real images.

    Returns a classifier checkpoint whose trunk carries the trained weights and
    whose head keeps its fresh initialization.
    """
    data = list(real_only_data)
    if any(s.label != LABEL_REAL for s in data):
        raise ValueError("pretraining data must contain only real images (label 1)")
    if not data and config.epochs:
        raise ValueError("pretraining data is empty")
    classifier = init.copy() if init is not None else build_small_cnn(arch, rng=stream_seed(config.seed, _INIT),
                                                                        lr=config.lr)
    ae = autoencoder_from(classifier, stream_seed(config.seed, _INIT, 1))
    ae.lr, ae.betas, ae.eps = config.lr, config.betas, config.eps
    records: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = make_rng(stream_seed(config.seed, _SHUFFLE, epoch)).permutation(len(data))
        for start in range(0, len(data), config.batch_size):
            batch = [data[i] for i in order[start:start + config.batch_size]]
            clean = np.stack([preprocess_train(s.image, config.crop, stream_seed(config.seed, _PREP, step, j),
                                               config.augment) for j, s in enumerate(batch)])
            noisy = clean + make_rng(stream_seed(config.seed, _NOISE, step)).normal(0.0, config.noise_std, clean.shape)
            recon, caches = ae.forward(noisy)
            loss, grad = ops.mse_loss(recon, clean)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite reconstruction loss at step {step}")
            grads, _ = ae.backward(caches, grad)
            ae = adam_step(ae, grads)
            step += 1
            _emit({"step": step, "epoch": epoch, "recon_loss": loss}, log_sink, records)
    out = classifier.copy()
    for name in classifier.trunk_param_names():
        out.params[name] = ae.params[name].copy()
    out.adam = AdamState(m={k: np.zeros_like(v) for k, v in out.params.items()},
                         v={k: np.zeros_like(v) for k, v in out.params.items()})
    return PretrainResult(Checkpoint(out, config.epochs - 1, step, config.hash()), ae, records)


# ------------------------------------------------------------------ ablation

@dataclass
class AblationCell:
    r_mask_range: tuple[float, float]
    r_aspect_range: tuple[float, float]
    mean_acc: float
    std_acc: float
    mean_ap: float
    std_ap: float


def ablation_run(mask_grid: Sequence[MaskConfig], config: TrainConfig, train_data: Sequence[Sample],
                 test_sets: Mapping[str, Sequence[Sample]], init: Optional[ModelParams] = None,
                 train_subset: str = "") -> list[AblationCell]:
    """Train once per mask config and report last-five-epoch mean/std of avg ACC/AP."""
    if not mask_grid:
        raise ValueError("empty ablation grid")
    if config.epochs < 5:
        raise ValueError("ablation needs at least 5 epochs for the stability window")
    cells = []
    for mc in mask_grid:
        cfg = copy.copy(config)
        cfg.mask_config = mc
        result = train(cfg, train_data, None, init=init)
        rep = stability_report(result.last(5), test_sets, cfg.crop, train_subset)
        cells.append(AblationCell(mc.r_mask_range, mc.r_aspect_range, rep.mean_acc, rep.std_acc,
                                  rep.mean_ap, rep.std_ap))
    return cells


def ablation_table(cells: Sequence[AblationCell]) -> str:
    """Masked-ratio rows by aspect-ratio columns, cells ``acc (+-std)`` in percent."""
    rows = sorted({c.r_mask_range for c in cells})
    cols = sorted({c.r_aspect_range for c in cells}, key=lambda r: (r[1] - r[0], r))
    lookup = {(c.r_mask_range, c.r_aspect_range): c for c in cells}
    fmt = lambda r: f"({r[0]:g}, {r[1]:g})"
    table = [["r_mask \\ r_aspect"] + [fmt(c) for c in cols]]
    for r in rows:
        line = [fmt(r)]
        for c in cols:
            cell = lookup.get((r, c))
            line.append("-" if cell is None else f"{100 * cell.mean_acc:.1f} (+-{100 * cell.std_acc:.1f})")
        table.append(line)
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in table)


def cross_generator_accuracy(params: ModelParams, test_sets: Mapping[str, Sequence[Sample]], crop: int,
                             exclude: Sequence[str] = ()) -> float:
    return mean_metrics(evaluate_sets(params, test_sets, crop, exclude))["acc"]
