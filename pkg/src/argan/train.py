"""Alternating adversarial training, inference and training-set evaluation."""

from __future__ import annotations

import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint as ckpt
from .config import ArganConfig
from .data import GT_THRESHOLD, PRED_THRESHOLD, SampleTriplet, binarize_mask, from_nchw, to_nchw
from .losses import FeatureExtractor, LossBreakdown, loss_adv, loss_det, loss_rem, loss_total
from .metrics import MetricReport, ber, rmse_lab
from .nets import DiscriminatorNet, Generator, GeneratorState
from .optim import Adam, Momentum
from .tensor import Tensor, backward, no_grad

log = logging.getLogger(__name__)

LOG_HEADER = "iter,l_det,l_rem_mse,l_rem_per,l_adv_g,l_adv_d,d_real,d_fake"


class NumericalError(RuntimeError):
    pass


class _BatchSampler:
    """Shuffled epochs over ``n`` items; batches never straddle an epoch."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n, self.batch = n, min(batch, n)
        self.rng = np.random.default_rng(seed)
        self.order: list[int] = []

    def next(self) -> list[int]:
        if len(self.order) < self.batch:
            self.order = [int(i) for i in self.rng.permutation(self.n)]
        out, self.order = self.order[:self.batch], self.order[self.batch:]
        return out


def build_models(config: ArganConfig) -> tuple[Generator, DiscriminatorNet]:
    rng = np.random.default_rng(config.seed)
    gen = Generator(config.N, config.depth, config.base_channels, config.channel_cap,
                    share_weights=config.share_weights, rng=rng)
    disc = DiscriminatorNet(config.image_size, rng=rng)
    return gen, disc


@dataclass
class StepLog:
    iteration: int
    l_det: float
    l_rem_mse: float
    l_rem_per: float
    l_adv_g: float
    l_adv_d: float
    d_real: float
    d_fake: float

    def csv(self) -> str:
        vals = [self.l_det, self.l_rem_mse, self.l_rem_per, self.l_adv_g, self.l_adv_d,
                self.d_real, self.d_fake]
        return ",".join([str(self.iteration)] + [repr(float(v)) for v in vals])


class Trainer:
    """One discriminator Adam step then one generator momentum step per iteration.

    The generator forward pass is shared by both steps: the discriminator
    sees detached outputs, and generator weights do not change in between.
    """

    def __init__(self, config: ArganConfig, labeled: Sequence[SampleTriplet],
                 unlabeled: Sequence[SampleTriplet] | None = None,
                 fx: FeatureExtractor | None = None):
        if not labeled:
            raise ValueError("training needs at least one labeled triplet")
        if config.semi_supervised and not unlabeled:
            raise ValueError("semi_supervised is set but no unlabeled data was given")
        size = config.image_size
        for t in list(labeled) + list(unlabeled or []):
            if t.shadow.shape[:2] != (size, size):
                raise ValueError(f"{t.name}: image is {t.shadow.shape[:2]}, config expects {size}x{size}")
        self.config = config
        self.labeled = list(labeled)
        self.unlabeled = list(unlabeled or []) if config.semi_supervised else []
        self.gen, self.disc = build_models(config)
        self.fx = fx or FeatureExtractor()
        self.opt_g = Momentum(self.gen.named_parameters(), config.lr, config.momentum_mu)
        self.opt_d = Adam(self.disc.named_parameters(), config.lr, config.adam_beta1,
                          config.adam_beta2, config.adam_eps)
        self.sampler = _BatchSampler(len(self.labeled), config.batch_size, config.seed + 1)
        self.u_sampler = (_BatchSampler(len(self.unlabeled), config.batch_size, config.seed + 2)
                          if self.unlabeled else None)
        self.iteration = 0
        self.history: list[StepLog] = []

    def _batch(self):
        idx = self.sampler.next()
        items = [self.labeled[i] for i in idx]
        I = Tensor(to_nchw([t.shadow for t in items]))
        M = Tensor(to_nchw([t.matte for t in items]))
        F = Tensor(to_nchw([t.free for t in items]))
        U = None
        if self.u_sampler is not None:
            U = Tensor(to_nchw([self.unlabeled[i].shadow for i in self.u_sampler.next()]))
        return I, M, F, U

    def step(self) -> StepLog:
        cfg = self.config
        self.iteration += 1
        self.gen.train()
        self.disc.train()
        I, M, F, U = self._batch()
        states = self.gen(I, cfg.N)
        out = states[-1].output
        u_out = self.gen(U, cfg.N)[-1].output if U is not None else None

        # discriminator
        self.disc.refresh_spectral()
        self.disc.zero_grad()
        d_real = self.disc(F)
        d_fake = self.disc(out.detach())
        d_unsup = self.disc(u_out.detach()) if u_out is not None else None
        d_loss, _ = loss_adv(d_real, d_fake, d_unsup, cfg.lam)
        _check_finite({"l_adv_d": d_loss})
        backward(d_loss)
        self.opt_d.step()

        # generator
        self.gen.zero_grad()
        self.disc.zero_grad()
        d_fake_g = self.disc(out)
        d_unsup_g = self.disc(u_out) if u_out is not None else None
        _, g_adv = loss_adv(d_real.detach(), d_fake_g, d_unsup_g, cfg.lam)
        l_det = loss_det([s.attention for s in states], M)
        l_mse, l_per = loss_rem([s.output for s in states], F, self.fx)
        parts = LossBreakdown(l_det, l_mse, l_per, g_adv, d_loss)
        _check_finite({"l_det": l_det, "l_rem_mse": l_mse, "l_rem_per": l_per, "l_adv_g": g_adv})
        backward(loss_total(parts))
        self.opt_g.step()
        self.disc.zero_grad()

        row = StepLog(self.iteration, float(l_det.data), float(l_mse.data), float(l_per.data),
                      float(g_adv.data), float(d_loss.data), float(d_real.data.mean()),
                      float(d_fake.data.mean()))
        self.history.append(row)
        return row

    def run(self, iterations: int | None = None, log_path: str | os.PathLike | None = None,
            ckpt_path: str | os.PathLike | None = None) -> list[StepLog]:
        iterations = self.config.iterations if iterations is None else iterations
        every = self.config.checkpoint_every
        fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
        try:
            if fh:
                fh.write(LOG_HEADER + "\n")
            for _ in range(iterations):
                row = self.step()
                if fh:
                    fh.write(row.csv() + "\n")
                if row.iteration % 100 == 0:
                    log.info("iter %d det %.4f mse %.4f per %.4f adv_g %.3f adv_d %.3f",
                             row.iteration, row.l_det, row.l_rem_mse, row.l_rem_per,
                             row.l_adv_g, row.l_adv_d)
                if ckpt_path and every and row.iteration % every == 0:
                    self.save(ckpt_path)
        finally:
            if fh:
                fh.close()
        if ckpt_path:
            self.save(ckpt_path)
        return self.history

    # -- persistence ----------------------------------------------------------
    def state_tensors(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        out.update(model_tensors(self.gen, "G"))
        out.update(model_tensors(self.disc, "D"))
        for k, v in self.opt_g.state().items():
            out[f"opt_g.{k}"] = v
        for k, v in self.opt_d.state().items():
            out[f"opt_d.{k}"] = v
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        expected = self.state_tensors()
        missing = [k for k in expected if k not in tensors]
        extra = [k for k in tensors if k not in expected]
        if missing or extra:
            name = (missing or extra)[0]
            raise ckpt.CheckpointError(f"tensor {name}: {'missing from' if missing else 'unexpected in'} checkpoint")
        load_model_tensors(self.gen, tensors, "G")
        load_model_tensors(self.disc, tensors, "D")
        self.opt_g.load_state({k[6:]: ckpt.assign(v, tensors[k], k)
                               for k, v in expected.items() if k.startswith("opt_g.")})
        self.opt_d.load_state({k[6:]: ckpt.assign(v, tensors[k], k)
                               for k, v in expected.items() if k.startswith("opt_d.")})
        self.iteration = int(self.opt_d.t)

    def save(self, path: str | os.PathLike) -> None:
        ckpt.save_checkpoint(path, self.config, self.state_tensors())


def model_tensors(model, prefix: str) -> "OrderedDict[str, np.ndarray]":
    out = OrderedDict()
    for k, p in model.named_parameters().items():
        out[f"{prefix}.{k}"] = p.data
    for k, b in model.named_buffers().items():
        out[f"{prefix}.{k}"] = b
    return out


def load_model_tensors(model, tensors: dict[str, np.ndarray], prefix: str) -> None:
    for k, p in model.named_parameters().items():
        name = f"{prefix}.{k}"
        if name not in tensors:
            raise ckpt.CheckpointError(f"tensor {name}: missing from checkpoint")
        p.data = ckpt.assign(p.data, tensors[name], name)
    for k, b in model.named_buffers().items():
        name = f"{prefix}.{k}"
        if name not in tensors:
            raise ckpt.CheckpointError(f"tensor {name}: missing from checkpoint")
        b[...] = ckpt.assign(b, tensors[name], name)


def load_generator(path: str | os.PathLike) -> tuple[ArganConfig, Generator]:
    """Rebuild the generator stored in a checkpoint, in eval mode."""
    config, tensors = ckpt.load_checkpoint(path)
    gen, _ = build_models(config)
    load_model_tensors(gen, tensors, "G")
    return config, gen.eval()


def _check_finite(losses: dict[str, Tensor]) -> None:
    for name, t in losses.items():
        if not np.all(np.isfinite(t.data)):
            raise NumericalError(f"non-finite value in {name}")


def infer(gen: Generator, images: np.ndarray, n_steps: int | None = None,
          batch_size: int = 4) -> list[GeneratorState]:
    """Eval-mode generator pass over an NCHW array; returns per-step states
    with batch-concatenated attention and output arrays."""
    was_training = gen.training
    gen.eval()
    steps = n_steps or gen.n_steps
    att = [[] for _ in range(steps)]
    outs = [[] for _ in range(steps)]
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            states = gen(Tensor(images[start:start + batch_size]), steps)
            for i, s in enumerate(states):
                att[i].append(s.attention.data)
                outs[i].append(s.output.data)
    gen.train(was_training)
    return [GeneratorState(i + 1, Tensor(np.concatenate(att[i])), Tensor(np.concatenate(outs[i])), None)
            for i in range(steps)]


def evaluate(gen: Generator, samples: Sequence[SampleTriplet], n_steps: int | None = None,
             gt_tau: float = GT_THRESHOLD, pred_tau: float = PRED_THRESHOLD) -> dict[str, float]:
    """Detection BER and shadow-region LAB RMSE of the final step, plus the
    identity baseline (O = I, attention = 0) for comparison."""
    states = infer(gen, to_nchw([t.shadow for t in samples]), n_steps)
    att = from_nchw(states[-1].attention.data)
    outs = from_nchw(states[-1].output.data)
    bers, base_bers, rm, base_rm, rm_all = [], [], [], [], []
    for t, a, o in zip(samples, att, outs):
        gt = binarize_mask(t.matte, gt_tau)
        bers.append(ber(binarize_mask(a, pred_tau), gt).ber)
        base_bers.append(ber(np.zeros_like(gt), gt).ber)
        rm.append(rmse_lab(o, t.free, gt, "shadow"))
        base_rm.append(rmse_lab(t.shadow, t.free, gt, "shadow"))
        rm_all.append(rmse_lab(o, t.free))
    return {"ber": float(np.mean(bers)), "ber_identity": float(np.mean(base_bers)),
            "rmse_shadow": float(np.mean(rm)), "rmse_shadow_identity": float(np.mean(base_rm)),
            "rmse_all": float(np.mean(rm_all))}


def read_log(path: str | os.PathLike) -> list[dict[str, float]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            rows.append({k: float(v) for k, v in zip(header, line.strip().split(","))})
    return rows
