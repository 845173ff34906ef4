"""Bivariate Gaussian negative log-likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_2PI = math.log(2.0 * math.pi)
ONE_MINUS_RHO2_MIN = 1e-12


@dataclass(frozen=True)
class BiGaussianParams:
    mu_x: float
    mu_y: float
    sigma_x: float
    sigma_y: float
    rho: float

    def is_valid(self, sigma_cap: float = 1e3) -> bool:
        vals = (self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho)
        return (all(math.isfinite(v) for v in vals) and 0 < self.sigma_x <= sigma_cap
                and 0 < self.sigma_y <= sigma_cap and -0.999 < self.rho < 0.999)


def bivariate_nll(mu_x, mu_y, sigma_x, sigma_y, rho, x, y):
    """Elementwise ``-log N2((x, y); mu, Sigma)`` on tensors, evaluated in the log domain."""
    one_m = torch.clamp(1.0 - rho * rho, min=ONE_MINUS_RHO2_MIN)
    zx = (x - mu_x) / sigma_x
    zy = (y - mu_y) / sigma_y
    quad = (zx * zx + zy * zy - 2.0 * rho * zx * zy) / one_m
    return LOG_2PI + torch.log(sigma_x) + torch.log(sigma_y) + 0.5 * torch.log(one_m) + 0.5 * quad


def nll(params: BiGaussianParams, target) -> float:
    p = [torch.tensor(v, dtype=torch.float64) for v in
         (params.mu_x, params.mu_y, params.sigma_x, params.sigma_y, params.rho)]
    t = [torch.tensor(float(v), dtype=torch.float64) for v in target]
    return float(bivariate_nll(*p, *t))
