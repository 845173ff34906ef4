"""Finite-difference verification of autograd gradients on a small probe model."""

from __future__ import annotations

import numpy as np
import torch

from .model import ModelConfig, TrajectoryTransformer, build_model
from .training import mean_nll

FAMILIES = {
    "linear": ("embed.branch.vessel", "embed.branch.p_lat", "embed.branch.p_lon", "head"),
    "attention": (".attn.", ".self_attn.", ".cross_attn."),
    "feedforward": (".ff.",),
    "recurrent": ("embed.branch.m_lat", "embed.branch.m_lon"),
    "layernorm": (".norm",),
}


def probe_config(cell: str = "gru", seed: int = 0) -> ModelConfig:
    """A full-variant model under 500 parameters."""
    widths = {"vessel": 1, "p_lat": 1, "p_lon": 1, "m_lat": 1, "m_lon": 1}
    return ModelConfig(variant="gmm-trans-rnn", cell=cell, d_model=5, widths=widths, d_ff=2,
                       D=3, V=2, H=2, seed=seed)


def random_batch(cfg: ModelConfig, batch: int = 4, seed: int = 0, dtype=torch.float64):
    """Random inputs with non-negative contexts, for checks that do not need real data."""
    g = torch.Generator().manual_seed(seed)

    def part(T):
        d = {"vessel": torch.randn(batch, T, 3, generator=g, dtype=dtype),
             "p_lat": torch.rand(batch, T, cfg.D, generator=g, dtype=dtype),
             "p_lon": torch.rand(batch, T, cfg.V, generator=g, dtype=dtype),
             "m_lat": torch.rand(batch, T, cfg.H, cfg.D, generator=g, dtype=dtype),
             "m_lon": torch.rand(batch, T, cfg.H, cfg.V, generator=g, dtype=dtype)}
        return {k: v for k, v in d.items() if k in cfg.branches}

    src, tgt = part(cfg.t_obs - 1), part(cfg.n_pred)
    target = torch.randn(batch, cfg.n_pred, 2, generator=g, dtype=dtype)
    return src, tgt, target


def family_of(name: str) -> str | None:
    for fam, pats in FAMILIES.items():
        if any(p in name for p in pats):
            return fam
    return None


def gradcheck(model: TrajectoryTransformer, src, tgt, target, names=None, eps: float = 1e-5,
              floor: float = 1e-6) -> dict:
    """Compare autograd gradients of the mean NLL with central differences.

    The relative error of one entry is ``|g - f| / max(|g|, |f|, floor)``.

    Returns
    -------
    dict
        ``{parameter name: max relative error}`` over every probed entry.
    """
    model = model.double()
    model.eval()
    params = dict(model.named_parameters())
    names = sorted(params) if names is None else list(names)
    model.zero_grad()
    mean_nll(model, src, tgt, target).backward()
    out = {}
    with torch.no_grad():
        for name in names:
            p = params[name]
            g = p.grad.detach().clone().reshape(-1)
            flat = p.data.view(-1)
            worst = 0.0
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = float(mean_nll(model, src, tgt, target))
                flat[i] = orig - eps
                down = float(mean_nll(model, src, tgt, target))
                flat[i] = orig
                fd = (up - down) / (2 * eps)
                a = float(g[i])
                worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), floor))
            out[name] = worst
    return out


def run_probe(cell: str = "gru", seed: int = 0) -> tuple[dict, int]:
    """Gradcheck every parameter of a probe model; returns per-family max error and parameter count."""
    cfg = probe_config(cell, seed)
    model = build_model(cfg, torch.float64)
    n = sum(p.numel() for p in model.parameters())
    src, tgt, target = random_batch(cfg, seed=seed)
    errs = gradcheck(model, src, tgt, target)
    fams: dict = {}
    for name, e in errs.items():
        fam = family_of(name) or "other"
        fams[fam] = max(fams.get(fam, 0.0), e)
    return fams, n


def max_error(errors: dict) -> float:
    return float(np.max(list(errors.values()))) if errors else 0.0
