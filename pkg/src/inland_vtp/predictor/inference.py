"""Autoregressive point prediction and KM rollout."""

from __future__ import annotations

import numpy as np
import torch

from ..context import LookupDict
from ..geometry import RiverGeometry, dir_sign
from .model import TrajectoryTransformer
from .samples import SampleSet, context_features, to_inputs


def rollout_km(k_obs_last: float, y_obs_last: float, y_hat, direction: str) -> np.ndarray:
    """KMs of the predicted steps under forward-difference speed semantics.

    The first predicted KM advances by the last observed speed; each later one
    by the previous predicted speed. ``y_hat`` may be the full prediction
    (its last value is unused) or just the leading values.
    """
    s = dir_sign(direction)
    y_hat = np.asarray(y_hat, dtype=float)
    n = 5 if y_hat.shape[-1] < 5 else y_hat.shape[-1]
    k0 = np.asarray(k_obs_last, dtype=float)[..., None]
    y0 = np.broadcast_to(np.asarray(y_obs_last, dtype=float)[..., None], y_hat.shape[:-1] + (1,))
    steps = np.concatenate([y0, y_hat[..., : n - 1]], axis=-1)
    return k0 + s * np.cumsum(steps, axis=-1)


def sample_mean(mu_x, mu_y, sigma_x, sigma_y, rho, n: int, rng) -> np.ndarray:
    """Mean of ``n`` correlated bivariate draws per row; returns ``(B, 2)``."""
    z = rng.standard_normal((len(mu_x), n, 2))
    x = mu_x[:, None] + sigma_x[:, None] * z[..., 0]
    y = mu_y[:, None] + sigma_y[:, None] * (rho[:, None] * z[..., 0]
                                            + np.sqrt(1.0 - rho[:, None] ** 2) * z[..., 1])
    return np.stack([x.mean(axis=1), y.mean(axis=1)], axis=-1)


def _batch_predict(model, sub: SampleSet, lookup, geom, n, rng, freeze_context):
    cfg = model.cfg
    dtype = model.head.weight.dtype
    to = cfg.t_obs
    branches = cfg.branches
    ctx_b = [b for b in branches if b != "vessel"]
    B = len(sub)
    vessel = sub.vessel()
    obs_ctx = sub.context(lookup, slice(0, to), ctx_b) if ctx_b else {}
    src = to_inputs(vessel[:, : to - 1], {b: v[:, : to - 1] for b, v in obs_ctx.items()}, branches, dtype)
    dec_vessel = [vessel[:, to - 1]]
    dec_ctx = {b: [v[:, to - 1]] for b, v in obs_ctx.items()}
    directions = sub.dir
    sign = np.array([dir_sign(d) for d in directions], dtype=float)
    km = sub.km[:, to - 1] + sign * sub.y[:, to - 1]
    q = sub.q_bin[:, to - 1]
    preds = np.empty((B, cfg.n_pred, 2))
    kms = np.empty((B, cfg.n_pred))
    with torch.no_grad():
        mem = model.encode(src)
        for j in range(cfg.n_pred):
            tgt = to_inputs(np.stack(dec_vessel, axis=1),
                            {b: np.stack(v, axis=1) for b, v in dec_ctx.items()}, branches, dtype)
            params = model.to_params(model.decode(mem, tgt)[:, -1])
            p = [t.double().numpy() for t in params]
            preds[:, j] = sample_mean(*p, n, rng)
            kms[:, j] = km
            if j == cfg.n_pred - 1:
                break
            x_hat, y_hat = preds[:, j, 0], preds[:, j, 1]
            km_c = np.clip(km, *geom.km_range)
            a = np.empty(B)
            lane = np.empty(B, dtype=int)
            for d in np.unique(directions):
                sel = directions == d
                a[sel] = geom.curvature(km_c[sel], d)
                lane[sel] = geom.lanes(km_c[sel], x_hat[sel], d)
            dec_vessel.append(np.stack([x_hat, y_hat, a], axis=-1))
            for b in dec_ctx:
                if freeze_context:
                    dec_ctx[b].append(dec_ctx[b][0])
                    continue
                col = np.empty_like(dec_ctx[b][0])
                for d in np.unique(directions):
                    sel = directions == d
                    col[sel] = context_features(lookup, d, q[sel, None], lane[sel, None], km_c[sel, None], (b,))[b][:, 0]
                dec_ctx[b].append(col)
            km = km + sign * y_hat
    return preds, kms


def predict_point(model: TrajectoryTransformer, samples: SampleSet, lookup: LookupDict | None,
                  geom: RiverGeometry, n: int = 40, seed: int = 0, freeze_context: bool = False,
                  chunk: int = 512):
    """Autoregressive sampled-mean predictions.

    The decoder starts from the last observed step and then consumes its own
    point predictions. Contexts of predicted steps are recomputed at the
    rolled-out KM (lane from the predicted offset, discharge held), or copied
    from the last observed step with ``freeze_context``.

    Returns
    -------
    preds : ndarray, shape (B, 5, 2)
        Predicted ``(offset, speed)`` per step.
    kms : ndarray, shape (B, 5)
        Rolled-out KMs of the predicted steps.
    """
    model.eval()
    rng = np.random.default_rng(seed)
    out_p, out_k = [], []
    for i in range(0, len(samples), chunk):
        sub = samples.subset(np.arange(i, min(i + chunk, len(samples))))
        p, k = _batch_predict(model, sub, lookup, geom, n, rng, freeze_context)
        out_p.append(p)
        out_k.append(k)
    if not out_p:
        return np.empty((0, model.cfg.n_pred, 2)), np.empty((0, model.cfg.n_pred))
    return np.concatenate(out_p), np.concatenate(out_k)
