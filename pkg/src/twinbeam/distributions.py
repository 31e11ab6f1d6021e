"""Photon-number statistics of a twin beam before detection.

The beam is modelled as three independent components: a paired component
(photon pairs, one photon per beam) plus one noise component per beam.
Each component follows a multimode thermal (Mandel-Rice) distribution with
a possibly non-integer mode count. The joint photon-number distribution of
the two beams is the two-fold convolution of the three components along the
pair diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .errors import ParameterError, TruncationError

# Default relative tail mass allowed to be cut off a truncated distribution.
EPS_TRUNC = 1e-10

# Hard cap for the automatic truncation search.
N_MAX_CAP = 4096


@dataclass(frozen=True)
class ModeParams:
    """Multimode thermal component: ``modes`` equally populated modes with
    ``mean_per_mode`` photons (or photon pairs) per mode."""

    modes: float
    mean_per_mode: float

    def __post_init__(self):
        if not (self.modes > 0.0 and np.isfinite(self.modes)):
            raise ParameterError(f"mode count must be positive, got {self.modes}")
        if not (self.mean_per_mode >= 0.0 and np.isfinite(self.mean_per_mode)):
            raise ParameterError(
                f"mean photons per mode must be >= 0, got {self.mean_per_mode}"
            )

    @property
    def mean(self) -> float:
        """Mean photon number, modes * mean_per_mode."""
        return self.modes * self.mean_per_mode

    @property
    def variance(self) -> float:
        """Photon-number variance, M*B*(1+B)."""
        return self.modes * self.mean_per_mode * (1.0 + self.mean_per_mode)


@dataclass(frozen=True)
class TwinBeamParams:
    """Paired + per-beam-noise decomposition of the twin beam."""

    paired: ModeParams
    noise_signal: ModeParams
    noise_idler: ModeParams

    @property
    def mean_signal_photons(self) -> float:
        return self.paired.mean + self.noise_signal.mean

    @property
    def mean_idler_photons(self) -> float:
        return self.paired.mean + self.noise_idler.mean


class CountDist:
    """Probability vector over counts 0..n_max.

    Wraps a read-only float64 array. Tiny negative entries (rounding noise
    down to -1e-12) are clipped to zero on construction; anything more
    negative is rejected.
    """

    __slots__ = ("probs",)

    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ParameterError("CountDist needs a non-empty 1-d probability vector")
        if p.min() < -1e-12 or p.max() > 1.0 + 1e-9:
            raise ParameterError(
                f"probabilities out of range [{p.min():.3e}, {p.max():.3e}]"
            )
        p = np.clip(p, 0.0, None)
        p.flags.writeable = False
        self.probs = p

    def __len__(self):
        return self.probs.size

    def __getitem__(self, idx):
        return self.probs[idx]

    @property
    def n_max(self) -> int:
        return self.probs.size - 1

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    @property
    def tail_deficit(self) -> float:
        """Probability mass lost to truncation (1 - mass, floored at 0)."""
        return max(0.0, 1.0 - self.mass)

    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    def moment(self, k: int) -> float:
        return float((np.arange(self.probs.size, dtype=np.float64) ** k) @ self.probs)

    def variance(self) -> float:
        m = self.mean()
        return self.moment(2) - m * m

    def rel_variance(self) -> float:
        """Fano-style relative variance (<x^2>-<x>^2)/<x>^2."""
        m = self.mean()
        if m == 0.0:
            return float("nan")
        return self.variance() / (m * m)

    def require_mass(self, eps: float = EPS_TRUNC) -> "CountDist":
        if not (1.0 - eps <= self.mass <= 1.0 + 1e-9):
            raise TruncationError(
                f"distribution mass {self.mass:.15f} outside [1-{eps:g}, 1]"
            )
        return self

    def padded(self, n_max: int) -> "CountDist":
        """Zero-pad (or return unchanged) so that len == n_max+1."""
        if n_max + 1 <= self.probs.size:
            return self
        out = np.zeros(n_max + 1)
        out[: self.probs.size] = self.probs
        return CountDist(out)

    def trimmed(self, tail_eps: float = 1e-13) -> "CountDist":
        """Drop trailing entries whose combined mass is below tail_eps."""
        tail = np.cumsum(self.probs[::-1])[::-1]
        keep = np.nonzero(tail > tail_eps)[0]
        last = int(keep[-1]) if keep.size else 0
        return CountDist(self.probs[: last + 1])

    @staticmethod
    def delta(at: int = 0, n_max: int = 0) -> "CountDist":
        out = np.zeros(max(n_max, at) + 1)
        out[at] = 1.0
        return CountDist(out)


class JointCountDist:
    """Probability matrix over count pairs (n_s, n_i)."""

    __slots__ = ("probs",)

    def __init__(self, probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 2 or p.size == 0:
            raise ParameterError("JointCountDist needs a non-empty 2-d matrix")
        if p.min() < -1e-12 or p.max() > 1.0 + 1e-9:
            raise ParameterError(
                f"probabilities out of range [{p.min():.3e}, {p.max():.3e}]"
            )
        p = np.clip(p, 0.0, None)
        p.flags.writeable = False
        self.probs = p

    @property
    def shape(self):
        return self.probs.shape

    def __getitem__(self, idx):
        return self.probs[idx]

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    @property
    def tail_deficit(self) -> float:
        return max(0.0, 1.0 - self.mass)

    def marginal_signal(self) -> CountDist:
        return CountDist(self.probs.sum(axis=1))

    def marginal_idler(self) -> CountDist:
        return CountDist(self.probs.sum(axis=0))

    def mean_signal(self) -> float:
        return float(np.arange(self.shape[0]) @ self.probs.sum(axis=1))

    def mean_idler(self) -> float:
        return float(np.arange(self.shape[1]) @ self.probs.sum(axis=0))

    def raw_cross_moment(self) -> float:
        """<n_s * n_i> over the truncated support."""
        ns = np.arange(self.shape[0], dtype=np.float64)
        ni = np.arange(self.shape[1], dtype=np.float64)
        return float(ns @ self.probs @ ni)

    def covariance(self) -> float:
        return self.raw_cross_moment() - self.mean_signal() * self.mean_idler()

    def correlation(self) -> float:
        """Pearson correlation of fluctuations; NaN when a marginal is flat."""
        vs = self.marginal_signal().variance()
        vi = self.marginal_idler().variance()
        if vs <= 0.0 or vi <= 0.0:
            return float("nan")
        return self.covariance() / np.sqrt(vs * vi)

    def require_mass(self, eps: float = EPS_TRUNC) -> "JointCountDist":
        if not (1.0 - eps <= self.mass <= 1.0 + 1e-9):
            raise TruncationError(
                f"joint distribution mass {self.mass:.15f} outside [1-{eps:g}, 1]"
            )
        return self

    def trimmed(self, tail_eps: float = 1e-13) -> "JointCountDist":
        """Drop trailing rows/columns whose combined mass is below tail_eps."""
        rows = np.cumsum(self.probs.sum(axis=1)[::-1])[::-1]
        cols = np.cumsum(self.probs.sum(axis=0)[::-1])[::-1]
        keep_r = np.nonzero(rows > tail_eps)[0]
        keep_c = np.nonzero(cols > tail_eps)[0]
        r = int(keep_r[-1]) if keep_r.size else 0
        c = int(keep_c[-1]) if keep_c.size else 0
        return JointCountDist(self.probs[: r + 1, : c + 1])


def mandel_rice(n, params: ModeParams):
    """Mandel-Rice probability of ``n`` photons for a multimode thermal field.

    Evaluates Gamma(n+M)/(n! Gamma(M)) * B^n / (1+B)^(n+M) in log space so
    large mode counts (M of order hundreds) do not overflow. ``n`` may be a
    scalar or an integer array.

    Args:
        n: photon number(s), >= 0.
        params: mode count and per-mode mean.

    Returns:
        Probability (float or float array matching ``n``).
    """
    m, b = params.modes, params.mean_per_mode
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise ParameterError("photon number must be >= 0")
    if b == 0.0:
        out = np.where(n_arr == 0, 1.0, 0.0)
        return float(out) if np.isscalar(n) else out
    log_p = (
        gammaln(n_arr + m)
        - gammaln(n_arr + 1.0)
        - gammaln(m)
        + n_arr * np.log(b)
        - (n_arr + m) * np.log1p(b)
    )
    out = np.exp(log_p)
    return float(out) if np.isscalar(n) else out


def component_dist(
    params: ModeParams, n_max: int | None = None, eps: float = EPS_TRUNC
) -> CountDist:
    """Truncated Mandel-Rice probability vector for one beam component.

    When ``n_max`` is None the cutoff is found automatically by doubling
    until the tail mass drops below ``eps`` (capped at N_MAX_CAP). An
    explicit ``n_max`` that leaves more than ``eps`` in the tail raises
    TruncationError carrying the smallest adequate cutoff.
    """
    if n_max is None:
        size = 16
        while size <= N_MAX_CAP:
            d = CountDist(mandel_rice(np.arange(size + 1), params))
            if d.tail_deficit < eps:
                return d
            size *= 2
        raise TruncationError(
            f"tail mass still {d.tail_deficit:.3e} at n_max={N_MAX_CAP} "
            f"for M={params.modes}, B={params.mean_per_mode}"
        )
    d = CountDist(mandel_rice(np.arange(n_max + 1), params))
    if d.tail_deficit >= eps:
        suggestion = None
        size = max(2 * (n_max + 1), 16)
        while size <= N_MAX_CAP:
            if CountDist(mandel_rice(np.arange(size + 1), params)).tail_deficit < eps:
                suggestion = size
                break
            size *= 2
        raise TruncationError(
            f"tail mass {d.tail_deficit:.3e} >= {eps:g} at n_max={n_max}",
            suggested_n_max=suggestion,
        )
    return d


def joint_photon_dist(
    params: TwinBeamParams, n_max: int | None = None, eps: float = EPS_TRUNC
) -> JointCountDist:
    """Joint signal-idler photon-number distribution of the twin beam.

    p(n_s, n_i) = sum_n p_s(n_s - n) p_i(n_i - n) p_p(n): the paired
    component contributes the same n to both beams, each noise component
    adds to its own beam only.
    """
    pp = component_dist(params.paired, n_max, eps)
    ps = component_dist(params.noise_signal, n_max, eps)
    pi = component_dist(params.noise_idler, n_max, eps)
    size = n_max + 1 if n_max is not None else max(len(pp), len(ps), len(pi))
    ps, pi = ps.padded(size - 1), pi.padded(size - 1)
    out = np.zeros((size, size))
    for n in range(min(size, len(pp))):
        w = pp[n]
        if w == 0.0:
            continue
        block = np.outer(ps.probs[: size - n], pi.probs[: size - n])
        out[n:, n:] += w * block
    return JointCountDist(out)
