"""Method-of-bins Cp(lambda) curve with per-bin statistics and uncertainty."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from ..model import Record

CURVE_HEADER = "lambda_low,lambda_high,count,cp_mean,cp_std,cp_u"


@dataclass(frozen=True)
class CurveBin:
    lambda_low: float
    lambda_high: float
    count: int
    cp_mean: float
    cp_std: float
    cp_uncertainty: float
    wind_mean: float = 0.0
    note: str = ""


@dataclass
class Curve:
    bins: list
    suppressed: dict  # bin index -> count, for bins under the minimum
    bin_width: float

    def peak(self) -> Optional[CurveBin]:
        return max(self.bins, key=lambda b: b.cp_mean) if self.bins else None


def bin_index(lam: float, width: float) -> int:
    """k such that k*w <= lam < (k+1)*w, robust to float division error."""
    k = math.floor(lam / width)
    if (k + 1) * width <= lam:
        k += 1
    elif k * width > lam:
        k -= 1
    return k


def bin_curve(
    records: Iterable[Record],
    bin_width: float = 0.25,
    min_bin_count: int = 30,
    u_cp_rel: Optional[Callable[[float], float]] = None,
) -> Curve:
    """Group valid records by tip speed ratio.

    ``u_cp_rel(v)`` gives the propagated relative Cp uncertainty at wind
    speed ``v``; it is combined with the standard error of the bin mean.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    groups: dict[int, tuple[list, list]] = {}
    for r in records:
        cp, lam = r[12], r[13]
        if cp is None or lam is None:
            continue
        g = groups.get(k := bin_index(lam, bin_width))
        if g is None:
            g = groups[k] = ([], [])
        g[0].append(cp)
        g[1].append(r[2])
    bins, suppressed = [], {}
    for k in sorted(groups):
        cps, winds = groups[k]
        n = len(cps)
        if n < min_bin_count:
            suppressed[k] = n
            continue
        mean = math.fsum(cps) / n
        std = math.sqrt(math.fsum((c - mean) ** 2 for c in cps) / n)
        note = "single sample" if n == 1 else ""
        v_mean = math.fsum(winds) / n
        rel = u_cp_rel(v_mean) if u_cp_rel is not None and v_mean > 0 else 0.0
        u = math.hypot(std / math.sqrt(n), mean * rel)
        bins.append(CurveBin(k * bin_width, (k + 1) * bin_width, n, mean, std, u, v_mean, note))
    return Curve(bins, suppressed, bin_width)


def curve_csv(curve: Curve) -> str:
    lines = [CURVE_HEADER]
    for b in curve.bins:
        lines.append(f"{b.lambda_low:.4f},{b.lambda_high:.4f},{b.count},{b.cp_mean:.6f},{b.cp_std:.6f},{b.cp_uncertainty:.6f}")
    return "\n".join(lines) + "\n"


def write_curve_csv(curve: Curve, path: str | Path) -> None:
    Path(path).write_text(curve_csv(curve))
