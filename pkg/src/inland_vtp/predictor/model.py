"""Transformer encoder-decoder emitting bivariate Gaussians over (offset, speed)."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from ..errors import NonFiniteOutput, ShapeMismatch

VARIANTS = ("trans", "gmm-trans", "gmm-trans-rnn")
BRANCHES = ("vessel", "p_lat", "p_lon", "m_lat", "m_lon")
VARIANT_BRANCHES = {
    "trans": ("vessel",),
    "gmm-trans": ("vessel", "p_lat", "p_lon"),
    "gmm-trans-rnn": BRANCHES,
}
MODEL_MAGIC = b"VTPMODL1"


def default_widths() -> dict:
    return {"vessel": 16, "p_lat": 32, "p_lon": 16, "m_lat": 32, "m_lon": 32}


@dataclass
class ModelConfig:
    variant: str = "gmm-trans-rnn"
    cell: str = "gru"  # "gru" (gated-simple) or "lstm" (gated-full)
    d_model: int = 128
    widths: dict = field(default_factory=default_widths)
    n_heads: int = 1
    n_enc_layers: int = 1
    n_dec_layers: int = 1
    d_ff: int = 512
    dropout: float = 0.0
    D: int = 201
    V: int = 61
    H: int = 20
    t_obs: int = 6
    n_pred: int = 5
    sigma_floor: float = 1e-3
    sigma_cap: float = 1e3
    rho_max: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.cell not in ("gru", "lstm"):
            raise ValueError(f"unknown recurrent cell {self.cell!r}")
        if self.d_model % self.n_heads:
            raise ValueError("n_heads must divide d_model")
        if self.variant == "gmm-trans-rnn" and sum(self.widths[b] for b in BRANCHES) != self.d_model:
            raise ValueError("branch widths must sum to d_model")

    @property
    def branches(self) -> tuple:
        return VARIANT_BRANCHES[self.variant]

    def branch_widths(self) -> dict:
        """Widths of the active branches, rescaled so they fill ``d_model``."""
        active = self.branches
        base = np.array([self.widths[b] for b in active], dtype=float)
        exact = base * self.d_model / base.sum()
        w = np.floor(exact).astype(int)
        for i in np.argsort(-(exact - w), kind="stable")[: self.d_model - w.sum()]:
            w[i] += 1
        return dict(zip(active, w.tolist()))

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def sinusoidal_encoding(n_pos: int, d: int) -> torch.Tensor:
    pos = torch.arange(n_pos, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(n_pos, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe


class Attention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d, d, bias=False)
        self.k = nn.Linear(d, d, bias=False)
        self.v = nn.Linear(d, d, bias=False)
        self.o = nn.Linear(d, d, bias=False)

    def forward(self, x, mem, causal: bool = False):
        B, Tq, d = x.shape
        Tk = mem.shape[1]
        h = self.n_heads
        dh = d // h
        q = self.q(x).view(B, Tq, h, dh).transpose(1, 2)
        k = self.k(mem).view(B, Tk, h, dh).transpose(1, 2)
        v = self.v(mem).view(B, Tk, h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if causal:
            mask = torch.ones(Tq, Tk, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(mask, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        out = (att @ v).transpose(1, 2).reshape(B, Tq, d)
        return self.o(out)


class FeedForward(nn.Module):
    def __init__(self, d: int, d_ff: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(d, d_ff)
        self.lin2 = nn.Linear(d_ff, d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        # GELU keeps the network smooth for finite-difference checks
        return self.lin2(self.drop(F.gelu(self.lin1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, d, n_heads, d_ff, dropout):
        super().__init__()
        self.attn = Attention(d, n_heads)
        self.ff = FeedForward(d, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        x = self.norm1(x + self.drop(self.attn(x, x)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderLayer(nn.Module):
    def __init__(self, d, n_heads, d_ff, dropout):
        super().__init__()
        self.self_attn = Attention(d, n_heads)
        self.cross_attn = Attention(d, n_heads)
        self.ff = FeedForward(d, d_ff, dropout)
        self.norm1 = nn.LayerNorm(d)
        self.norm2 = nn.LayerNorm(d)
        self.norm3 = nn.LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mem):
        x = self.norm1(x + self.drop(self.self_attn(x, x, causal=True)))
        x = self.norm2(x + self.drop(self.cross_attn(x, mem)))
        return self.norm3(x + self.drop(self.ff(x)))


class StepEmbedding(nn.Module):
    """Per-step embedding: linear branches for vectors, recurrent branches for ahead matrices."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.widths = cfg.branch_widths()
        in_dim = {"vessel": 3, "p_lat": cfg.D, "p_lon": cfg.V, "m_lat": cfg.D, "m_lon": cfg.V}
        rnn = nn.GRU if cfg.cell == "gru" else nn.LSTM
        self.branch = nn.ModuleDict()
        for name, w in self.widths.items():
            if name.startswith("m_"):
                self.branch[name] = rnn(in_dim[name], w, batch_first=True)
            else:
                self.branch[name] = nn.Linear(in_dim[name], w)
        self.register_buffer("vessel_mean", torch.zeros(3, dtype=torch.float64))
        self.register_buffer("vessel_scale", torch.ones(3, dtype=torch.float64))
        self.register_buffer("lat_scale", torch.ones((), dtype=torch.float64))
        self.register_buffer("lon_scale", torch.ones((), dtype=torch.float64))

    def forward(self, inputs: dict) -> torch.Tensor:
        parts = []
        for name, layer in self.branch.items():
            x = inputs[name]
            if name == "vessel":
                parts.append(layer((x - self.vessel_mean) / self.vessel_scale))
            elif name == "p_lat":
                parts.append(layer(x / self.lat_scale))
            elif name == "p_lon":
                parts.append(layer(x / self.lon_scale))
            else:
                scale = self.lat_scale if name == "m_lat" else self.lon_scale
                B, T, H, n = x.shape
                _, h_last = layer(x.reshape(B * T, H, n) / scale)
                if isinstance(h_last, tuple):  # LSTM returns (h, c)
                    h_last = h_last[0]
                parts.append(h_last[-1].reshape(B, T, -1))
        return torch.cat(parts, dim=-1)


class TrajectoryTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.embed = StepEmbedding(cfg)
        self.encoder = nn.ModuleList(
            EncoderLayer(d, cfg.n_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.n_enc_layers))
        self.decoder = nn.ModuleList(
            DecoderLayer(d, cfg.n_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.n_dec_layers))
        self.head = nn.Linear(d, 5)
        self.register_buffer("pos_enc", sinusoidal_encoding(cfg.t_obs + cfg.n_pred, d))
        self.register_buffer("out_mean", torch.zeros(2, dtype=torch.float64))
        self.register_buffer("out_scale", torch.ones(2, dtype=torch.float64))

    # -- shape checks ---------------------------------------------------------------

    def _check(self, inputs: dict, T: int):
        c = self.cfg
        expect = {"vessel": (T, 3), "p_lat": (T, c.D), "p_lon": (T, c.V),
                  "m_lat": (T, c.H, c.D), "m_lon": (T, c.H, c.V)}
        for name in c.branches:
            if name not in inputs:
                raise ShapeMismatch(f"missing input {name!r}")
            if tuple(inputs[name].shape[1:]) != expect[name]:
                raise ShapeMismatch(f"{name}: expected (B, {expect[name]}), got {tuple(inputs[name].shape)}")

    # -- building blocks --------------------------------------------------------------

    def encode(self, src: dict) -> torch.Tensor:
        """Encoder memory for observation steps ``1 .. t_obs-1``."""
        T = self.cfg.t_obs - 1
        self._check(src, T)
        x = self.embed(src) + self.pos_enc[:T].to(self.head.weight.dtype)
        for layer in self.encoder:
            x = layer(x)
        return x

    def decode(self, mem: torch.Tensor, tgt: dict) -> torch.Tensor:
        """Raw 5-vectors for every decoder position; position ``j`` predicts step ``t_obs + j + 1``."""
        T = tgt["vessel"].shape[1]
        self._check(tgt, T)
        start = self.cfg.t_obs - 1
        x = self.embed(tgt) + self.pos_enc[start:start + T].to(self.head.weight.dtype)
        for layer in self.decoder:
            x = layer(x, mem)
        return self.head(x)

    def to_params(self, raw: torch.Tensor):
        """Map raw outputs to ``(mu_x, mu_y, sigma_x, sigma_y, rho)`` in data units."""
        c = self.cfg
        mu = self.out_mean + self.out_scale * raw[..., :2]
        sigma = torch.clamp(self.out_scale * F.softplus(raw[..., 2:4]) + c.sigma_floor, max=c.sigma_cap)
        rho = c.rho_max * torch.tanh(raw[..., 4])
        out = (mu[..., 0], mu[..., 1], sigma[..., 0], sigma[..., 1], rho)
        if not all(torch.isfinite(t).all() for t in out):
            raise NonFiniteOutput("model produced non-finite distribution parameters")
        return out

    def forward(self, src: dict, tgt: dict):
        return self.to_params(self.decode(self.encode(src), tgt))

    # -- normalisation ------------------------------------------------------------------

    def set_normalization(self, vessel_mean, vessel_scale, lat_scale, lon_scale, out_mean, out_scale):
        with torch.no_grad():
            e = self.embed
            e.vessel_mean.copy_(torch.as_tensor(vessel_mean, dtype=e.vessel_mean.dtype))
            e.vessel_scale.copy_(torch.as_tensor(vessel_scale, dtype=e.vessel_scale.dtype))
            e.lat_scale.fill_(float(lat_scale))
            e.lon_scale.fill_(float(lon_scale))
            self.out_mean.copy_(torch.as_tensor(out_mean, dtype=self.out_mean.dtype))
            self.out_scale.copy_(torch.as_tensor(out_scale, dtype=self.out_scale.dtype))


def build_model(cfg: ModelConfig, dtype=torch.float32) -> TrajectoryTransformer:
    torch.manual_seed(cfg.seed)
    return TrajectoryTransformer(cfg).to(dtype)


def n_trainable(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def param_digest(model: nn.Module) -> str:
    import hashlib

    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_model(model: TrajectoryTransformer, path, extra: dict | None = None) -> None:
    entries, blobs, offset = [], [], 0
    for name, t in sorted(model.state_dict().items()):
        a = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"version": 1, "config": asdict(model.cfg), "tensors": entries,
                         "extra": extra or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_model(path, dtype=torch.float32):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MODEL_MAGIC:
        raise ValueError(f"{path} is not a model store")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    body = memoryview(raw)[16 + hlen:]
    model = TrajectoryTransformer(ModelConfig.from_dict(header["config"])).to(dtype)
    state = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(body, dtype="<f8", count=n, offset=e["offset"]).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(a.copy())
    model.load_state_dict(state)
    model.to(dtype)
    return model, header.get("extra", {})
