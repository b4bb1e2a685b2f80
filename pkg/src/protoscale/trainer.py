"""Student-teacher training loop with EMA updates and checkpointing.

One step: draw a batch, build a view set per image, run the frozen
teacher on its view and the student on all four of its views, average
the objective over the batch, backprop into the student, then pull the
teacher toward it by EMA. Every random draw comes from one generator
whose state rides inside the checkpoint, so a resumed run replays the
uninterrupted run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, build_view_batch
from .checkpoint import pack_rng_state, save_checkpoint, unpack_rng_state
from .errors import (
    ConfigError,
    ContractError,
    DistributionError,
    NonFiniteError,
    ParameterError,
)
from .losses import LossReport, LossWeights, total_loss
from .network import GroupingNetwork, model_config_arrays, model_config_from_arrays
from .optim import SGD, Adam, cosine_lr
from .tensor import Tensor

CSV_HEADER = "step,total,sem,inst,hier,sparsity,diversity,lr"

_SEED_BOUND = 2 ** 63


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    optimizer: str = "adam"
    lr: float = 1e-3
    lr_floor_ratio: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    sgd_momentum: float = 0.9
    ema_momentum: float = 0.99
    # ema_final != ema_momentum turns on a cosine ramp between the two
    # over the full run; equal values keep the momentum constant.
    ema_final: float = 0.99
    log_interval: int = 50
    checkpoint_interval: int = 500

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError(f"steps must be nonnegative, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr <= 0.0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 < self.lr_floor_ratio <= 1.0:
            raise ConfigError("lr_floor_ratio must lie in (0, 1]")
        for name in ("ema_momentum", "ema_final"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {value}")
        if self.log_interval < 1 or self.checkpoint_interval < 1:
            raise ConfigError("log and checkpoint intervals must be positive")


def ema_update(teacher_params, student_params, m):
    """Elementwise t <- m*t + (1-m)*s over matching parameter names.

    Accepts m=1 (teacher frozen solid) even though training configs keep
    the momentum strictly below 1.
    """
    if not 0.0 <= m <= 1.0:
        raise ParameterError(f"EMA momentum must lie in [0, 1], got {m}")
    if set(teacher_params) != set(student_params):
        raise ContractError("teacher and student parameter names differ")
    for name, target in teacher_params.items():
        source = student_params[name]
        if target.data.shape != source.data.shape:
            raise ContractError(
                f"EMA shape mismatch for {name}: "
                f"{target.data.shape} vs {source.data.shape}"
            )
        target.data *= m
        target.data += (1.0 - m) * source.data


def _merge_reports(total, reports):
    n = len(reports)

    def mean_of(name):
        return sum(getattr(r, name) for r in reports) / n

    per_scale = {
        key: [
            sum(r.per_scale[key][k] for r in reports) / n
            for k in range(len(reports[0].per_scale[key]))
        ]
        for key in reports[0].per_scale
    }
    return LossReport(
        total=total,
        semantic=mean_of("semantic"),
        instance=mean_of("instance"),
        hierarchical=mean_of("hierarchical"),
        sparsity=mean_of("sparsity"),
        diversity=mean_of("diversity"),
        per_scale=per_scale,
    )


class Trainer:
    """Owns both networks, the optimizer, and the training RNG stream."""

    def __init__(self, model_config, train_config, augment_config=None, loss_weights=None):
        self.model_config = model_config
        self.train_config = train_config
        self.augment_config = augment_config if augment_config is not None else AugmentConfig()
        self.loss_weights = loss_weights if loss_weights is not None else LossWeights()
        self.student = GroupingNetwork(model_config, train_config.seed)
        self.teacher = GroupingNetwork(model_config, train_config.seed).freeze()
        if train_config.optimizer == "adam":
            self.optimizer = Adam(
                self.student.params(),
                lr=train_config.lr,
                beta1=train_config.beta1,
                beta2=train_config.beta2,
                eps=train_config.adam_eps,
            )
        else:
            self.optimizer = SGD(
                self.student.params(),
                lr=train_config.lr,
                momentum=train_config.sgd_momentum,
            )
        self.rng = np.random.default_rng(train_config.seed)
        self.step = 0

    def lr_at(self, step):
        cfg = self.train_config
        total = max(cfg.steps, 1)
        return cosine_lr(cfg.lr, step, total, floor_ratio=cfg.lr_floor_ratio)

    def momentum_at(self, step):
        cfg = self.train_config
        if cfg.ema_final == cfg.ema_momentum or cfg.steps == 0:
            return cfg.ema_momentum
        progress = min(max(step / cfg.steps, 0.0), 1.0)
        ramp = 0.5 * (1.0 + math.cos(math.pi * progress))
        return cfg.ema_final - (cfg.ema_final - cfg.ema_momentum) * ramp

    def train_step(self, images):
        """One optimization step over a nonempty list of (3, s, s) images."""
        if not images:
            raise ContractError("train_step requires a nonempty batch")
        rng_before = self.rng.bit_generator.state
        try:
            reports = []
            total = None
            for image in images:
                seed = int(self.rng.integers(0, _SEED_BOUND))
                batch = build_view_batch(image, seed, self.augment_config)
                teacher_sets = self.teacher(Tensor(batch.teacher_view))
                student_views = [
                    self.student(Tensor(view)) for view in batch.student_views
                ]
                reports.append(total_loss(student_views, teacher_sets, self.loss_weights))
                total = reports[-1].total if total is None else total + reports[-1].total
            merged = _merge_reports(total * (1.0 / len(images)), reports)
            self._require_finite(merged)
            merged.total.backward()
            self._require_finite_grads()
        except DistributionError as exc:
            self.optimizer.zero_grad()
            self.rng.bit_generator.state = rng_before
            # An underflowed attention column is the same instability class
            # as a NaN loss: report it through the non-finite abort path.
            raise NonFiniteError(str(exc), term="attention-mass") from exc
        except NonFiniteError:
            # No parameter or moment was touched yet; undo the RNG draws
            # so the aborted step leaves no trace.
            self.optimizer.zero_grad()
            self.rng.bit_generator.state = rng_before
            raise
        self.optimizer.lr = self.lr_at(self.step)
        self.optimizer.step()
        self.optimizer.zero_grad()
        ema_update(
            self.teacher.params(), self.student.params(), self.momentum_at(self.step)
        )
        self.step += 1
        return merged

    def _require_finite(self, report):
        values = dict(report.components())
        values["total"] = report.total.item()
        for name, value in values.items():
            if not math.isfinite(value):
                raise NonFiniteError(
                    f"loss term {name} is non-finite ({value})", term=name
                )

    def _require_finite_grads(self):
        for name, p in self.student.params().items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(
                    f"non-finite gradient for {name}", term=f"grad:{name}"
                )

    # -- serialization --------------------------------------------------------

    def state_arrays(self):
        arrays = {"meta/step": np.array([float(self.step)])}
        arrays.update(model_config_arrays(self.model_config))
        arrays.update(self.student.export_arrays("student"))
        arrays.update(self.teacher.export_arrays("teacher"))
        for name, arr in self.optimizer.state_arrays().items():
            arrays[f"optim/{name}"] = arr.copy()
        arrays["rng/train"] = pack_rng_state(self.rng)
        return arrays

    def load_state(self, arrays):
        stored = model_config_from_arrays(arrays)
        if stored != self.model_config:
            raise ConfigError(
                "checkpoint model config does not match the configured model: "
                f"{stored} vs {self.model_config}"
            )
        self.student.load_arrays(arrays, "student")
        self.teacher.load_arrays(arrays, "teacher")
        prefix = "optim/"
        self.optimizer.load_state_arrays(
            {
                name[len(prefix):]: arr
                for name, arr in arrays.items()
                if name.startswith(prefix)
            }
        )
        self.rng = unpack_rng_state(arrays["rng/train"])
        self.step = int(arrays["meta/step"][0])


def train_loop(trainer, images, out_dir, status=None):
    """Run to the configured step count, logging and checkpointing.

    Appends to an existing metrics CSV (resume case) or starts one with
    the canonical header. Returns the final checkpoint path; a trainer
    already at or past the step target writes that checkpoint and stops.
    """
    if not images:
        raise ContractError("train_loop requires a nonempty image list")
    cfg = trainer.train_config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "metrics.csv"
    fresh = not csv_path.exists()
    with open(csv_path, "a", encoding="utf-8") as log:
        if fresh:
            log.write(CSV_HEADER + "\n")
        while trainer.step < cfg.steps:
            lr_now = trainer.lr_at(trainer.step)
            indices = trainer.rng.integers(0, len(images), size=cfg.batch_size)
            report = trainer.train_step([images[int(i)] for i in indices])
            row = [str(trainer.step)] + [
                repr(v)
                for v in (
                    report.total.item(),
                    report.semantic,
                    report.instance,
                    report.hierarchical,
                    report.sparsity,
                    report.diversity,
                    lr_now,
                )
            ]
            log.write(",".join(row) + "\n")
            log.flush()
            if status and (
                trainer.step % cfg.log_interval == 0 or trainer.step == cfg.steps
            ):
                status(
                    f"step {trainer.step}/{cfg.steps} "
                    f"total {report.total.item():.6f} lr {lr_now:.6g}"
                )
            if (
                trainer.step % cfg.checkpoint_interval == 0
                and trainer.step < cfg.steps
            ):
                save_checkpoint(
                    out / f"ckpt_{trainer.step:06d}.bin", trainer.state_arrays()
                )
    final_path = out / "ckpt_final.bin"
    save_checkpoint(final_path, trainer.state_arrays())
    return final_path
