"""First-order (GUM) propagation for Cp and tip speed ratio, with a Monte Carlo check."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UncertaintyBudget:
    u_v: float
    u_P_rel: float
    u_rho_rel: float
    u_A_rel: float
    u_cp_rel: float
    u_lambda_rel: float

    def __post_init__(self):
        if min(self.u_v, self.u_P_rel, self.u_rho_rel, self.u_A_rel, self.u_cp_rel, self.u_lambda_rel) < 0:
            raise ValueError("uncertainties must be >= 0")


def propagate_uncertainty(
    v: float,
    u_v: float,
    u_P_rel: float,
    u_rho_rel: float,
    u_A_rel: float = 0.0,
    u_omega_rel: float = 0.0,
    u_R_rel: float = 0.0,
) -> UncertaintyBudget:
    """Relative standard uncertainties of Cp = P / (rho A v^3 / 2) and lambda = omega R / v."""
    if not v > 0:
        raise ValueError("v must be > 0 (operating point above cut-in)")
    for name, x in (("u_v", u_v), ("u_P_rel", u_P_rel), ("u_rho_rel", u_rho_rel), ("u_A_rel", u_A_rel),
                    ("u_omega_rel", u_omega_rel), ("u_R_rel", u_R_rel)):
        if x < 0:
            raise ValueError(f"{name} must be >= 0")
    rv = u_v / v
    u_cp = math.sqrt(u_P_rel ** 2 + (3.0 * rv) ** 2 + u_rho_rel ** 2 + u_A_rel ** 2)
    u_lam = math.sqrt(rv ** 2 + u_omega_rel ** 2 + u_R_rel ** 2)
    return UncertaintyBudget(u_v, u_P_rel, u_rho_rel, u_A_rel, u_cp, u_lam)


def rho_uncertainty_rel(temp_c: float, pressure_pa: float, u_temp_c: float, u_pressure_pa: float) -> float:
    """Relative uncertainty of the ideal-gas density from T and p standard uncertainties."""
    if not temp_c > -273.15 or not pressure_pa > 0:
        raise ValueError("temperature and pressure must be physical")
    return math.hypot(u_pressure_pa / pressure_pa, u_temp_c / (temp_c + 273.15))


def monte_carlo_cp_rel(
    v: float,
    u_v: float,
    u_P_rel: float,
    u_rho_rel: float,
    u_A_rel: float = 0.0,
    n: int = 100_000,
    seed: int = 0,
) -> float:
    """Relative spread (std/mean) of Cp under independent normal input errors."""
    rng = np.random.default_rng(seed)
    vs = v + u_v * rng.standard_normal(n)
    p = 1.0 + u_P_rel * rng.standard_normal(n)
    rho = 1.0 + u_rho_rel * rng.standard_normal(n)
    area = 1.0 + u_A_rel * rng.standard_normal(n)
    cp = p / (rho * area * (vs / v) ** 3)
    return float(cp.std() / cp.mean())
