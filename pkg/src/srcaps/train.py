"""Adam training loop with step-halving learning rate, validation and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint, shape_diff
from .data import ImagePair, epoch_batches
from .errors import CheckpointError, ConfigurationError, NumericError
from .losses import Loss, LossSpec
from .metrics import evaluate_pair
from .model import ModelConfig, SRCaps, build

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch: int = 16
    lr: float = 1e-4
    halving: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    patch_size: int = 128
    val_every: int = 10
    ckpt_every: int = 10
    deterministic: bool = True
    augment: bool = False
    grad_clip: float | None = None
    loss: LossSpec = field(default_factory=LossSpec)

    def problems(self) -> list[str]:
        out = []
        for name in ("batch", "halving", "patch_size", "val_every", "ckpt_every"):
            if getattr(self, name) < 1:
                out.append(f"{name}={getattr(self, name)} must be >= 1")
        if self.epochs < 0:
            out.append(f"epochs={self.epochs} must be >= 0")
        if self.seed < 0:
            out.append(f"seed={self.seed} must be >= 0")
        if self.lr <= 0 or self.eps <= 0:
            out.append("lr and eps must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            out.append("betas must lie in [0, 1)")
        if self.grad_clip is not None and self.grad_clip <= 0:
            out.append("grad_clip must be > 0 when set")
        return out

    def validate(self) -> "TrainConfig":
        problems = self.problems()
        if problems:
            raise ConfigurationError("invalid train config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = {"name": self.loss.name, "params": dict(self.loss.params)}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train keys: {sorted(unknown)}")
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossSpec(d["loss"]["name"], dict(d["loss"].get("params", {})))
        return cls(**d)


def lr_at(epoch: int, config: TrainConfig) -> float:
    return config.lr * 0.5 ** (epoch // config.halving)


def make_optimizer(params, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.lr, betas=(config.beta1, config.beta2),
                            eps=config.eps, foreach=False)


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def adam_step(optimizer: torch.optim.Adam, named_params, batch_index: int = 0) -> None:
    """One bias-corrected Adam update; refuses to step on non-finite gradients."""
    for name, p in named_params:
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in {name} at batch {batch_index}")
    optimizer.step()


def set_deterministic(flag: bool) -> None:
    torch.use_deterministic_algorithms(flag)


class Trainer:
    """Owns model, loss and optimizer state for one run."""

    def __init__(self, model: SRCaps, config: TrainConfig, seed: int | None = None):
        self.model = model
        self.config = config.validate()
        self.seed = config.seed if seed is None else seed
        self.loss = Loss(config.loss)
        self.optimizer = make_optimizer(list(self.named_params().values()), config)
        self.step = 0
        self.epoch = 0
        self.history: list[dict] = []
        self.best_msssim = -math.inf

    def named_params(self) -> "OrderedDict[str, torch.nn.Parameter]":
        out = OrderedDict(self.model.named_parameters())
        for name, p in self.loss.named_parameters():
            out[f"loss.{name}"] = p
        return out

    def run_config(self) -> dict:
        return {"model": self.model.config.to_dict(), "train": self.config.to_dict()}

    def checkpoint(self) -> Checkpoint:
        named = self.named_params()
        moments = OrderedDict()
        for name, p in named.items():
            state = self.optimizer.state.get(p)
            if state:
                moments[name] = (state["exp_avg"], state["exp_avg_sq"])
        params = OrderedDict((n, p.detach().clone()) for n, p in named.items())
        return Checkpoint(self.run_config(), self.seed, params, self.step, self.epoch, moments)

    def restore(self, ckpt: Checkpoint) -> None:
        named = self.named_params()
        diff = shape_diff(OrderedDict((n, p) for n, p in named.items()), ckpt.params)
        if diff:
            raise CheckpointError("checkpoint does not match model:\n  " + "\n  ".join(diff))
        with torch.no_grad():
            for name, p in named.items():
                p.copy_(ckpt.params[name])
        for name, (m, v) in ckpt.moments.items():
            p = named[name]
            self.optimizer.state[p] = {
                "step": torch.tensor(float(ckpt.step)),
                "exp_avg": m.clone().to(p.dtype),
                "exp_avg_sq": v.clone().to(p.dtype),
            }
        self.step, self.epoch = ckpt.step, ckpt.epoch

    def train_step(self, lr_batch: torch.Tensor, hr_batch: torch.Tensor, batch_index: int) -> float:
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        sr = self.model(lr_batch)
        loss = self.loss(sr / 255.0, hr_batch / 255.0)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite loss at epoch {self.epoch} batch {batch_index}")
        loss.backward()
        if self.config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(list(self.named_params().values()), self.config.grad_clip)
        adam_step(self.optimizer, self.named_params().items(), batch_index)
        self.step += 1
        return float(loss.detach())

    def validate(self, pairs: list[ImagePair]) -> dict[str, float]:
        self.model.eval()
        rows = []
        with torch.no_grad():
            for pair in pairs:
                sr = self.model(pair.lr.unsqueeze(0))
                rows.append(evaluate_pair(sr, pair.hr.unsqueeze(0), border=self.model.config.r))
        self.model.train()
        return {k: float(np.mean([r[k] for r in rows])) for k in ("psnr", "ssim", "ms_ssim")}


def train_loop(model: SRCaps, train_pairs: list[ImagePair], config: TrainConfig,
               val_pairs: list[ImagePair] | None = None, run_dir=None,
               resume: Checkpoint | None = None) -> tuple[Checkpoint, list[dict]]:
    """Train for ``config.epochs`` epochs (from ``resume.epoch`` when resuming).

    Each epoch draws one patch per training image in a permutation seeded by
    ``(seed, epoch)``, so a resumed run replays the uninterrupted one exactly.
    With ``run_dir``, history lines go to ``history.jsonl`` and checkpoints to
    ``last.ckpt`` / ``best.ckpt``.
    """
    if not train_pairs:
        raise ConfigurationError("training set is empty")
    set_deterministic(config.deterministic)
    trainer = Trainer(model, config)
    if resume is not None:
        trainer.restore(resume)
    run_dir = Path(run_dir) if run_dir is not None else None
    history_file = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        history_file = open(run_dir / "history.jsonl", "a" if resume else "w")
    r = model.config.r
    try:
        for epoch in range(trainer.epoch, config.epochs):
            lr = lr_at(epoch, config)
            set_lr(trainer.optimizer, lr)
            rng = np.random.default_rng([config.seed, epoch])
            for b, (lr_batch, hr_batch) in enumerate(
                    epoch_batches(train_pairs, config.patch_size, r, config.batch, rng,
                                  config.augment)):
                try:
                    loss = trainer.train_step(lr_batch, hr_batch, b)
                except NumericError:
                    if run_dir is not None:
                        trainer.checkpoint().save(run_dir / "halt.ckpt")
                    raise
                record = {"epoch": epoch, "step": trainer.step, "lr": lr, "train_loss": loss,
                          "val_psnr": None, "val_ssim": None, "val_msssim": None}
                trainer.history.append(record)
            trainer.epoch = epoch + 1
            done = trainer.epoch
            if val_pairs and (done % config.val_every == 0 or done == config.epochs):
                scores = trainer.validate(val_pairs)
                record.update(val_psnr=scores["psnr"], val_ssim=scores["ssim"],
                              val_msssim=scores["ms_ssim"])
                log.info("epoch %d: loss %.5f psnr %.3f ms-ssim %.5f", done, loss,
                         scores["psnr"], scores["ms_ssim"])
                if run_dir is not None and scores["ms_ssim"] > trainer.best_msssim:
                    trainer.best_msssim = scores["ms_ssim"]
                    trainer.checkpoint().save(run_dir / "best.ckpt")
            if history_file is not None:
                for rec in trainer.history[-_epoch_len(trainer.history, epoch):]:
                    history_file.write(json.dumps(rec) + "\n")
                history_file.flush()
            if run_dir is not None and (done % config.ckpt_every == 0 or done == config.epochs):
                trainer.checkpoint().save(run_dir / "last.ckpt")
    except OSError as exc:
        log.error("I/O failure during training, state after epoch %d may be partial: %s",
                  trainer.epoch, exc)
        raise
    finally:
        if history_file is not None:
            history_file.close()
    final = trainer.checkpoint()
    if run_dir is not None:
        final.save(run_dir / "last.ckpt")
    return final, trainer.history


def _epoch_len(history: list[dict], epoch: int) -> int:
    n = 0
    for rec in reversed(history):
        if rec["epoch"] != epoch:
            break
        n += 1
    return n


def model_from_checkpoint(ckpt: Checkpoint) -> SRCaps:
    """Rebuild a model from a checkpoint's config echo and load its weights."""
    cfg = ModelConfig.from_dict(ckpt.config["model"])
    model = build(cfg, ckpt.seed)
    named = OrderedDict(model.named_parameters())
    params = OrderedDict((k, v) for k, v in ckpt.params.items() if not k.startswith("loss."))
    diff = shape_diff(OrderedDict((n, p) for n, p in named.items()), params)
    if diff:
        raise CheckpointError("checkpoint does not match model:\n  " + "\n  ".join(diff))
    with torch.no_grad():
        for name, p in named.items():
            p.copy_(params[name])
    model.eval()
    return model
