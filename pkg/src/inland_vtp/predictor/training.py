"""Training loop: Adam on the mean bivariate NLL with early stopping on validation NLL."""

from __future__ import annotations

import copy
import csv
import time
from dataclasses import dataclass

import numpy as np
import torch

from ..context import LookupDict
from ..errors import Diverged
from .model import TrajectoryTransformer
from .nll import bivariate_nll
from .samples import SampleSet, batch_inputs


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 128
    max_epochs: int = 1000
    patience: int = 50
    clip: float = 1.0
    seed: int = 0
    time_limit_s: float | None = None  # optional wall-clock cap, checked between epochs
    cache_bytes: int = 1 << 30  # precompute batch tensors when they fit

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def mean_nll(model: TrajectoryTransformer, src, tgt, target) -> torch.Tensor:
    mx, my, sx, sy, rho = model(src, tgt)
    return bivariate_nll(mx, my, sx, sy, rho, target[..., 0], target[..., 1]).mean()


class BatchSource:
    """Serves model-ready batches, precomputing them if they fit in ``cache_bytes``."""

    def __init__(self, samples: SampleSet, lookup: LookupDict | None, model: TrajectoryTransformer,
                 batch_size: int, cache_bytes: int = 1 << 30):
        self.samples = samples
        self.lookup = lookup
        self.branches = model.cfg.branches
        self.t_obs = model.cfg.t_obs
        self.dtype = model.head.weight.dtype
        self.batch_size = batch_size
        c = model.cfg
        per_step = 3 + {"trans": 0, "gmm-trans": c.D + c.V}.get(c.variant, c.D + c.V + c.H * (c.D + c.V))
        per_sample = per_step * (samples.n_steps - 1) * torch.finfo(self.dtype).bits // 8
        self._full = None
        if per_sample * len(samples) <= cache_bytes:
            self._full = self._make(np.arange(len(samples)))

    def __len__(self) -> int:
        return len(self.samples)

    def _make(self, idx):
        return batch_inputs(self.samples.subset(idx), self.lookup, self.branches, self.t_obs, self.dtype)

    def get(self, idx):
        if self._full is None:
            return self._make(idx)
        src, tgt, target = self._full
        t = torch.as_tensor(idx)
        return ({k: v[t] for k, v in src.items()}, {k: v[t] for k, v in tgt.items()}, target[t])

    def batches(self, order=None):
        order = np.arange(len(self)) if order is None else order
        for i in range(0, len(order), self.batch_size):
            yield self.get(order[i:i + self.batch_size])


def fit_normalization(model: TrajectoryTransformer, samples: SampleSet, lookup: LookupDict | None,
                      max_samples: int = 2000, seed: int = 0) -> None:
    """Set input/output scaling buffers from training data statistics."""
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(len(samples))[:max_samples])
    sub = samples.subset(idx)
    v = sub.vessel()[:, :-1].reshape(-1, 3)
    scale = v.std(axis=0)
    scale[scale < 1e-12] = 1.0
    tgt = sub.vessel()[:, model.cfg.t_obs:, :2].reshape(-1, 2)
    out_scale = tgt.std(axis=0)
    out_scale[out_scale < 1e-12] = 1.0
    lat_scale = lon_scale = 1.0
    if lookup is not None and model.cfg.variant != "trans":
        ctx = sub.context(lookup, slice(0, sub.n_steps - 1), ("p_lat", "p_lon"))
        lat_scale = float(ctx["p_lat"].max(axis=-1).mean()) or 1.0
        lon_scale = float(ctx["p_lon"].max(axis=-1).mean()) or 1.0
    model.set_normalization(v.mean(axis=0), scale, lat_scale, lon_scale, tgt.mean(axis=0), out_scale)


def evaluate_nll(model: TrajectoryTransformer, source: BatchSource) -> float:
    model.eval()
    total, n = 0.0, 0
    with torch.no_grad():
        for src, tgt, target in source.batches():
            b = target.shape[0]
            total += float(mean_nll(model, src, tgt, target)) * b
            n += b
    return total / max(n, 1)


def train(model: TrajectoryTransformer, train_set: SampleSet, val_set: SampleSet,
          lookup: LookupDict | None, cfg: TrainConfig, log=None):
    """Train in place, restoring the best-validation parameters (epoch 0 included).

    Returns the per-epoch history as ``[(epoch, train_nll, val_nll), ...]``.
    """
    if not len(train_set) or not len(val_set):
        raise ValueError("train and validation sets must be non-empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    tr = BatchSource(train_set, lookup, model, cfg.batch_size, cfg.cache_bytes)
    va = BatchSource(val_set, lookup, model, max(cfg.batch_size, 512), cfg.cache_bytes)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)

    best_val = evaluate_nll(model, va)
    history = [(0, evaluate_nll(model, tr), best_val)]
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    start = time.monotonic()
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        total, n = 0.0, 0
        for src, tgt, target in tr.batches(rng.permutation(len(tr))):
            opt.zero_grad()
            loss = mean_nll(model, src, tgt, target)
            if not torch.isfinite(loss):
                raise Diverged(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip)
            opt.step()
            total += loss.item() * target.shape[0]
            n += target.shape[0]
        val = evaluate_nll(model, va)
        history.append((epoch, total / n, val))
        if log is not None:
            log(f"epoch {epoch}: train {total / n:.4f} val {val:.4f}")
        if val < best_val:
            best_val, stale = val, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
        if stale >= cfg.patience:
            break
        if cfg.time_limit_s is not None and time.monotonic() - start > cfg.time_limit_s:
            break
    model.load_state_dict(best_state)
    model.eval()
    return history


def fit_batch(model: TrajectoryTransformer, src, tgt, target, steps: int, lr: float = 3e-3,
              clip: float = 1.0, seed: int = 0) -> list[float]:
    """Repeated optimizer steps on one fixed batch with cosine-decayed Adam.

    Returns the loss before each step followed by the final loss.
    """
    torch.manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, max(steps, 1))
    model.train()
    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = mean_nll(model, src, tgt, target)
        if not torch.isfinite(loss):
            raise Diverged("non-finite loss while fitting a fixed batch")
        losses.append(loss.item())
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
        opt.step()
        sched.step()
    with torch.no_grad():
        losses.append(float(mean_nll(model, src, tgt, target)))
    return losses


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_nll", "val_nll"])
        for e, t, v in history:
            w.writerow([e, repr(float(t)), repr(float(v))])


def read_history(path) -> list[tuple[int, float, float]]:
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), float(r["train_nll"]), float(r["val_nll"])) for r in csv.DictReader(fh)]

