"""Certificates: structured pass/fail records with the numbers behind them."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Certificate:
    id: str
    passed: bool
    hypothesis: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)
    tolerance: dict = field(default_factory=dict)
    skipped: bool = False
    reason: str = ""

    def as_dict(self):
        return {
            "id": self.id,
            "pass": bool(self.passed),
            "skipped": bool(self.skipped),
            "reason": self.reason,
            "hypothesis": _plain(self.hypothesis),
            "fitted": _plain(self.fitted),
            "tolerance": _plain(self.tolerance),
        }


def _plain(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out[k] = _plain(v)
        elif isinstance(v, (np.ndarray, list, tuple)):
            out[k] = [_scalar(x) for x in np.asarray(v).ravel()]
        else:
            out[k] = _scalar(v)
    return out


def _scalar(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def fit_monotone_constant(y, r, eps, increasing=True):
    """Smallest C >= 0 making y e^{Cr} nondecreasing (or y e^{-Cr} nonincreasing) up to eps.

    The check is cumulative over all pairs k < j, not just neighbours:
    y_j e^{C r_j} >= (1 - eps) y_k e^{C r_k}. Returns inf if y is not positive.
    """
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    if y.size < 2:
        return 0.0
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        return np.inf
    ly = np.log(y)
    iu = np.triu_indices(len(r), 1)
    dr = (r[None, :] - r[:, None])[iu]
    if increasing:
        gap = (np.log(1 - eps) + ly[:, None] - ly[None, :])[iu]
    else:
        gap = (ly[None, :] - ly[:, None] - np.log(1 + eps))[iu]
    # each pair demands C * dr >= gap
    if np.any((dr == 0) & (gap > 0)):
        return np.inf
    pos, neg = dr > 0, dr < 0
    lo = max(0.0, (gap[pos] / dr[pos]).max()) if np.any(pos) else 0.0
    hi = (gap[neg] / dr[neg]).min() if np.any(neg) else np.inf
    return float(lo) if lo <= hi else np.inf


def worst_violation(y, r, C, eps, increasing=True):
    """Largest relative drop (rise) of y e^{+-Cr} over pairs, beyond which monotonicity fails."""
    y = np.asarray(y, dtype=float) * np.exp((C if increasing else -C) * np.asarray(r))
    iu = np.triu_indices(len(y), 1)
    if increasing:
        rel = 1 - y[None, :] / y[:, None]
    else:
        rel = y[None, :] / y[:, None] - 1
    return float(max(0.0, rel[iu].max())) if len(y) > 1 else 0.0
