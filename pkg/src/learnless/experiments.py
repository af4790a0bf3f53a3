"""Desk-scale transfer experiment: train on one synthetic generator, test on the rest.

Three arms share data, seeds and budget:

* ``scratch``      fresh network, unmasked training
* ``pretrained``   denoising warm start on real-only images, unmasked training
* ``pretrained_lol`` same warm start, trained with random rectangle masks

Per seed, the cross-generator score is the final checkpoint's mean ACC over the
held-out generators. Stability is the population std of the avg-ACC over all
test subsets across the last five epoch checkpoints.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .data import SyntheticBenchmark, default_benchmark
from .evaluation import evaluate_sets, mean_metrics
from .masking import MaskConfig
from .trainer import Mode, TrainConfig, pretrain, train

ARMS = ("scratch", "pretrained", "pretrained_lol")


@dataclass(frozen=True)
class TransferSettings:
    train_generator: str = "gen_a"
    n_train: int = 200          # per class
    n_test: int = 100           # per class
    epochs: int = 20
    lr: float = 1e-4            # desk-profile optimizer; crop matches the 32 px synthetic images
    batch_size: int = 4
    crop: int = 32
    pretrain_epochs: int = 5
    pretrain_images: int = 400
    noise_std: float = 0.5
    mask_config: MaskConfig = field(default_factory=MaskConfig)


@dataclass
class ArmRun:
    arm: str
    seed: int
    cross_acc: list[float]       # per epoch, mean over held-out generators
    avg_acc: list[float]         # per epoch, mean over every test subset

    @property
    def final_cross(self) -> float:
        return self.cross_acc[-1]

    @property
    def last5_std(self) -> float:
        return float(np.std(self.avg_acc[-5:]))


@dataclass
class TransferResult:
    settings: TransferSettings
    runs: list[ArmRun]
    seconds: float

    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.runs})

    def arm(self, name: str) -> list[ArmRun]:
        return sorted((r for r in self.runs if r.arm == name), key=lambda r: r.seed)

    def mean_cross(self, name: str) -> float:
        return float(np.mean([r.final_cross for r in self.arm(name)]))

    def ordering_holds(self, margin: float = 0.05) -> bool:
        lol, pre, scratch = (self.mean_cross(a) for a in ("pretrained_lol", "pretrained", "scratch"))
        return lol >= pre >= scratch and lol - scratch >= margin

    def stability_wins(self) -> int:
        """Seeds where masked training is at least as stable as unmasked (both warm-started)."""
        lol, pre = self.arm("pretrained_lol"), self.arm("pretrained")
        return sum(a.last5_std <= b.last5_std for a, b in zip(lol, pre))

    def summary(self) -> str:
        lines = [f"{'arm':>15}  {'cross ACC':>9}  {'last-5 std':>10}"]
        for name in ARMS:
            runs = self.arm(name)
            lines.append(f"{name:>15}  {100 * self.mean_cross(name):9.1f}  "
                         f"{100 * float(np.mean([r.last5_std for r in runs])):10.2f}")
        return "\n".join(lines)


def run_seed(bench: SyntheticBenchmark, seed: int, settings: TransferSettings = TransferSettings(),
             arms: Sequence[str] = ARMS) -> list[ArmRun]:
    s = settings
    train_data = bench.make_subset(s.train_generator, s.n_train, seed)
    tests = {g: bench.make_subset(g, s.n_test, seed + 1000, "val") for g in bench.subset_ids}
    held_out = [g for g in bench.subset_ids if g != s.train_generator]
    warm = None
    if any(a.startswith("pretrained") for a in arms):
        pcfg = TrainConfig(lr=s.lr, batch_size=s.batch_size, epochs=s.pretrain_epochs, crop=s.crop,
                           seed=seed, noise_std=s.noise_std, mode=Mode.PRETRAIN)
        warm = pretrain(pcfg, bench.make_real(s.pretrain_images, seed)).checkpoint.params
    runs = []
    for arm in arms:
        if arm not in ARMS:
            raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
        cfg = TrainConfig(lr=s.lr, batch_size=s.batch_size, epochs=s.epochs, crop=s.crop, seed=seed,
                          mode=Mode.LOL if arm == "pretrained_lol" else Mode.BASELINE,
                          mask_config=s.mask_config, eval_every_steps=0)
        result = train(cfg, train_data, init=warm if arm != "scratch" else None)
        cross, avg = [], []
        for ckpt in result.checkpoints:
            per = evaluate_sets(ckpt.params, tests, s.crop)
            cross.append(float(np.mean([per[g]["acc"] for g in held_out])))
            avg.append(mean_metrics(per)["acc"])
        runs.append(ArmRun(arm, seed, cross, avg))
    return runs


def transfer_experiment(seeds: Sequence[int] = range(5), bench: Optional[SyntheticBenchmark] = None,
                        settings: TransferSettings = TransferSettings(),
                        progress: Optional[Callable[[ArmRun], None]] = None) -> TransferResult:
    bench = bench or default_benchmark()
    if settings.epochs < 5:
        raise ValueError("the stability window needs at least 5 epochs")
    t0 = time.perf_counter()
    runs = []
    for seed in seeds:
        for r in run_seed(bench, int(seed), settings):
            runs.append(r)
            if progress is not None:
                progress(r)
    return TransferResult(settings, runs, time.perf_counter() - t0)
