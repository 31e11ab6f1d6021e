"""Detector response and per-component photocount distributions.

The detector is a camera strip of N single-photon pixels with per-pixel
dark-count probability D and detection efficiency eta. The response
T(c, n; eta, D, N) is the probability of seeing c fired pixels given n
incident photons; photocount distributions of the beam components are the
response applied to the photon-number distributions.

Two evaluation routes are provided for T:

* ``detection_response`` evaluates the inclusion-exclusion (alternating)
  sum. In double precision the sum loses all significance already for a
  few counts when N is large, so every result carries a running error
  bound; uncertifiable results transparently escalate to an arbitrary-
  precision evaluation of the same sum instead of returning garbage.
* ``response_matrix`` builds whole (count, photon) response tables through
  a forward occupancy recursion that has no cancellation at all. The two
  routes agree to ~1e-12 and are cross-checked in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import mpmath as mp
import numpy as np
from scipy.special import erf, gammaln

from .distributions import EPS_TRUNC, CountDist, JointCountDist
from .errors import NumericalInstabilityError, ParameterError

# Certification thresholds for the double-precision alternating sum: the
# result is accepted when its error bound stays below REL_CERT relatively
# or ABS_FLOOR absolutely (values below the floor are noise-level anyway).
_REL_CERT = 1e-11
_ABS_FLOOR = 1e-18

# The arbitrary-precision path returns exact zero once the value plus its
# bound is provably below this; otherwise it escalates until the relative
# error is certified.
_MP_ZERO_FLOOR = 1e-30

# Conservative relative error of one log-space term (log-binomials via
# running sums, log1p/log/exp chain).
_TERM_RELERR = 1e-12

_MP_DPS_START = 40
_MP_DPS_MAX = 640


@dataclass(frozen=True)
class DetectorParams:
    """Camera strips: pixel count per strip, efficiencies and dark means."""

    pixels: int
    eta_signal: float
    eta_idler: float
    dark_signal: float = 0.0
    dark_idler: float = 0.0

    def __post_init__(self):
        if self.pixels < 1:
            raise ParameterError(f"pixel count must be >= 1, got {self.pixels}")
        for name in ("eta_signal", "eta_idler"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {v}")
        for name in ("dark_signal", "dark_idler"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ParameterError(f"{name} must be in [0, 1), got {v}")


class ProfileKind(str, Enum):
    FLAT = "flat"
    GAUSSIAN2D = "gaussian2d"
    GAUSSIAN1D = "gaussian1d"


@dataclass(frozen=True)
class CorrelationProfile:
    """Shape and extent (in pixels) of the correlated area of a pair.

    ``extent`` is m_c: the full area pi*R^2 for the 2-d Gaussian profile,
    twice the 1/e half-width (2X) for the 1-d Gaussian, the plateau area
    for the flat profile.
    """

    kind: ProfileKind
    extent: float

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if not self.extent > 0.0:
            raise ParameterError(f"profile extent must be > 0, got {self.extent}")


@dataclass(frozen=True)
class ComponentCountDists:
    """Photocount distributions of the five beam components after detection."""

    genuine_pairs: CountDist
    broken_signal: CountDist
    broken_idler: CountDist
    noise_signal: CountDist
    noise_idler: CountDist


def _log_binom_big(n: int, k: int) -> float:
    """log C(n, k) by explicit log sums; accurate for huge n with small k."""
    k = min(k, n - k)
    if k < 0:
        return -math.inf
    s = 0.0
    for j in range(k):
        s += math.log(n - j) - math.log(j + 1)
    return s


def _binom_pmf_exact(c: int, n: int, p: float) -> float:
    """Binomial pmf with log-space fallback for large n."""
    if c < 0 or c > n:
        return 0.0
    if p == 0.0:
        return 1.0 if c == 0 else 0.0
    if p == 1.0:
        return 1.0 if c == n else 0.0
    return math.exp(
        _log_binom_big(n, c) + c * math.log(p) + (n - c) * math.log1p(-p)
    )


def _alternating_sum_double(c, n, eta, dark, pixels):
    """One pass of the alternating l-sum in scaled log space.

    Returns (value, certified) where ``certified`` reports whether the
    accumulated error bound keeps the value trustworthy.
    """
    log_pref = _log_binom_big(pixels, c)
    log_terms = np.empty(c + 1)
    signs = np.empty(c + 1)
    log_cl = 0.0  # running log C(c, l)
    for l in range(c + 1):
        base = (1.0 - eta) + eta * l / pixels
        if base <= 0.0:
            log_terms[l] = -math.inf if n > 0 else log_cl + (pixels - l) * math.log1p(-dark)
        else:
            log_terms[l] = (
                log_cl + (pixels - l) * math.log1p(-dark) + n * math.log(base)
            )
        signs[l] = 1.0 if (c - l) % 2 == 0 else -1.0
        if l < c:
            log_cl += math.log(c - l) - math.log(l + 1)
    m = float(np.max(log_terms))
    if m == -math.inf:
        return 0.0, True
    scaled = np.exp(log_terms - m)
    # Neumaier-compensated signed sum.
    total = 0.0
    comp = 0.0
    for t, sg in zip(scaled, signs):
        x = sg * t
        s = total + x
        if abs(total) >= abs(x):
            comp += (total - s) + x
        else:
            comp += (x - s) + total
        total = s
    total += comp
    noise = float(np.sum(scaled)) * _TERM_RELERR + (c + 2) * 2.3e-16
    log_m = m + log_pref
    # Certified when the absolute error bound exp(log_m)*noise is below the
    # floor or below REL_CERT * |result|; compare in log space.
    log_abs_noise = log_m + (math.log(noise) if noise > 0 else -math.inf)
    if log_abs_noise <= math.log(_ABS_FLOOR):
        value = 0.0 if total <= 0.0 else math.exp(log_m + math.log(total))
        return value, True
    if total != 0.0 and noise <= _REL_CERT * abs(total):
        value = math.copysign(math.exp(log_m + math.log(abs(total))), total)
        return value, True
    return 0.0, False


def _alternating_sum_mp(c, n, eta, dark, pixels):
    """Arbitrary-precision alternating sum with escalating working precision."""
    comb_pref = math.comb(pixels, c)
    combs = [math.comb(c, l) for l in range(c + 1)]
    dps = _MP_DPS_START
    while dps <= _MP_DPS_MAX:
        with mp.workdps(dps):
            one_minus_d = 1 - mp.mpf(dark)
            eta_m = mp.mpf(eta)
            pow_d = one_minus_d ** pixels
            inv_d = 1 / one_minus_d
            total = mp.mpf(0)
            max_abs = mp.mpf(0)
            for l in range(c + 1):
                base = (1 - eta_m) + eta_m * l / pixels
                if base <= 0:
                    term = mp.mpf(combs[l]) * pow_d if n == 0 else mp.mpf(0)
                else:
                    term = mp.mpf(combs[l]) * pow_d * base ** n
                if (c - l) % 2:
                    term = -term
                total += term
                if abs(term) > max_abs:
                    max_abs = abs(term)
                pow_d *= inv_d
            noise = max_abs * mp.mpf(10) ** (2 - dps) * (c + 2)
            value = mp.mpf(comb_pref) * total
            if total == 0 and max_abs == 0:
                return 0.0
            if abs(total) > noise * mp.mpf(10) ** 12:
                return float(value)
            if mp.mpf(comb_pref) * (abs(total) + noise) < _MP_ZERO_FLOOR:
                return 0.0
        dps *= 2
    raise NumericalInstabilityError(c, n, f"not certified at dps={_MP_DPS_MAX}")


def detection_response(c: int, n: int, eta: float, dark: float, pixels: int) -> float:
    """Probability T(c, n) of c fired pixels given n incident photons.

    Inclusion-exclusion sum over l = 0..c, evaluated with compensated
    summation and a certified error bound; falls back to arbitrary
    precision when double precision cannot certify the result. Tiny
    negative results (>= -1e-12, pure rounding) are clamped to zero.

    Raises:
        ParameterError: argument out of range.
        NumericalInstabilityError: value not certifiable even at the
            maximum working precision, or certified below -1e-12.
    """
    c, n, pixels = int(c), int(n), int(pixels)
    if pixels < 1:
        raise ParameterError(f"pixel count must be >= 1, got {pixels}")
    if not 0 <= c <= pixels:
        raise ParameterError(f"count c={c} outside [0, {pixels}]")
    if n < 0:
        raise ParameterError(f"photon number must be >= 0, got {n}")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"efficiency must be in [0, 1], got {eta}")
    if not 0.0 <= dark < 1.0:
        raise ParameterError(f"dark-count mean must be in [0, 1), got {dark}")
    if dark == 0.0 and c > n:
        # Finite difference of a degree-n polynomial of order c > n.
        return 0.0
    if eta == 0.0:
        # The l-sum telescopes to a pure dark-count binomial.
        return _binom_pmf_exact(c, pixels, dark)
    value, certified = _alternating_sum_double(c, n, eta, dark, pixels)
    if not certified:
        value = _alternating_sum_mp(c, n, eta, dark, pixels)
    if value < 0.0:
        if value >= -1e-12:
            return 0.0
        raise NumericalInstabilityError(c, n, f"certified negative value {value:.3e}")
    return value


def response_matrix(
    c_max: int, n_max: int, eta: float, dark: float, pixels: int
) -> np.ndarray:
    """Response table T[c, n] for c <= c_max, n <= n_max.

    Runs a forward recursion on the number of photon-marked pixels (every
    step adds one photon, which marks a uniformly chosen pixel with
    probability eta) and then convolves with the dark-count binomial.
    All intermediate quantities are non-negative, so the table is accurate
    to ~1e-13 at any pixel count, unlike the alternating sum.
    """
    if pixels < 1:
        raise ParameterError(f"pixel count must be >= 1, got {pixels}")
    c_max = min(int(c_max), int(pixels))
    k = np.arange(c_max + 1, dtype=np.float64)
    stay = (1.0 - eta) + eta * k / pixels
    grow = eta * (pixels - (k - 1)) / pixels
    occ = np.zeros((n_max + 1, c_max + 1))
    occ[0, 0] = 1.0
    q = occ[0].copy()
    for t in range(1, n_max + 1):
        q_new = q * stay
        q_new[1:] += q[:-1] * grow[1:]
        q = q_new
        occ[t] = q
    if dark == 0.0:
        return occ.T.copy()
    # W[k, c] = C(pixels-k, c-k) dark^(c-k) (1-dark)^(pixels-c), by a
    # product recurrence to avoid lgamma error at huge pixel counts.
    w = np.zeros((c_max + 1, c_max + 1))
    log_keep = math.log1p(-dark)
    for start in range(c_max + 1):
        w[start, start] = math.exp((pixels - start) * log_keep)
        run = w[start, start]
        for c in range(start + 1, c_max + 1):
            d = c - start
            run *= (pixels - c + 1) * dark / (d * (1.0 - dark))
            w[start, c] = run
    return (occ @ w).T.copy()


def coverage_probability(m_d: float, profile: CorrelationProfile) -> float:
    """Probability that a pair's partner count lies inside a detection area
    of m_d pixels, given the correlated-area profile."""
    if m_d < 0.0:
        raise ParameterError(f"detection-area extent must be >= 0, got {m_d}")
    ratio = m_d / profile.extent
    if profile.kind is ProfileKind.FLAT:
        return min(ratio, 1.0)
    if profile.kind is ProfileKind.GAUSSIAN2D:
        return -math.expm1(-ratio)
    return float(erf(ratio))


def binomial_thin(c: int, c_src: int, eta: float) -> float:
    """Binomial probability of keeping c out of c_src at retention eta.

    Zero for c > c_src by the summation-bound convention of the thinning
    sums.
    """
    if c < 0 or c_src < 0:
        raise ParameterError("counts must be >= 0")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"retention must be in [0, 1], got {eta}")
    return _binom_pmf_exact(c, c_src, eta)


def thinning_matrix(size: int, eta: float) -> np.ndarray:
    """Matrix B[c, c'] = binomial_thin(c, c', eta), shape (size, size)."""
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"retention must be in [0, 1], got {eta}")
    out = np.zeros((size, size))
    if eta == 0.0:
        out[0, :] = 1.0
        return out
    if eta == 1.0:
        np.fill_diagonal(out, 1.0)
        return out
    idx = np.arange(size)
    c, cs = np.meshgrid(idx, idx, indexing="ij")
    valid = c <= cs
    logb = (
        gammaln(cs + 1.0)
        - gammaln(c + 1.0)
        - gammaln(np.where(valid, cs - c, 0) + 1.0)
        + c * math.log(eta)
        + (cs - c) * math.log1p(-eta)
    )
    out[valid] = np.exp(logb[valid])
    return out


def _apply_response(
    p: CountDist, eta: float, dark: float, pixels: int, eps: float = EPS_TRUNC
) -> CountDist:
    """Push a photon-number distribution through the detector response,
    growing the count cutoff until the output mass deficit matches the
    input's within eps."""
    budget = p.tail_deficit + eps
    c_max = 16
    while True:
        t = response_matrix(c_max, p.n_max, eta, dark, pixels)
        f = t @ p.probs
        if 1.0 - f.sum() <= budget or c_max >= pixels:
            return CountDist(f)
        c_max *= 2


def genuine_pair_dist(
    pp: CountDist, det: DetectorParams, m_c: float, eps: float = EPS_TRUNC
) -> CountDist:
    """Distribution of genuine paired counts (both photons of a pair seen).

    A pair is detected as a pair with probability eta_s*eta_i; merging of
    distinct pairs is modelled with an effective pixel count of N*m_c,
    rounded to the nearest integer >= 1.
    """
    n_eff = max(1, round(det.pixels * m_c))
    return _apply_response(pp, det.eta_signal * det.eta_idler, 0.0, n_eff, eps)


def broken_pair_dists(
    pp: CountDist, det: DetectorParams, m_c: float, eps: float = EPS_TRUNC
) -> tuple[CountDist, CountDist]:
    """Distributions of one-photon-detected pairs in the signal and idler
    strips (efficiencies eta_s(1-eta_i) and eta_i(1-eta_s), no darks)."""
    n_eff = max(1, round(det.pixels * m_c))
    f_ps = _apply_response(
        pp, det.eta_signal * (1.0 - det.eta_idler), 0.0, n_eff, eps
    )
    f_pi = _apply_response(
        pp, det.eta_idler * (1.0 - det.eta_signal), 0.0, n_eff, eps
    )
    return f_ps, f_pi


def noise_count_dist(
    pa: CountDist, eta: float, dark: float, pixels: int, eps: float = EPS_TRUNC
) -> CountDist:
    """Photocount distribution of a noise component including dark counts."""
    return _apply_response(pa, eta, dark, pixels, eps)


def split_genuine_pairs(
    ftp: CountDist, eta_d: float, pixels: int
) -> tuple[CountDist, CountDist]:
    """Split genuine paired counts by detection-area coverage.

    Each paired count independently stays a registered pair with
    probability eta_d; otherwise it breaks into one single count per strip.
    Returns (registered pairs, broken-by-area pairs), both normalized.
    """
    if not 0.0 <= eta_d <= 1.0:
        raise ParameterError(f"coverage probability must be in [0, 1], got {eta_d}")
    if ftp.n_max > pixels:
        raise ParameterError("paired-count support exceeds the pixel count")
    theta = thinning_matrix(len(ftp), eta_d)
    f_reg = theta @ ftp.probs
    f_si = thinning_matrix(len(ftp), 1.0 - eta_d) @ ftp.probs
    return CountDist(f_reg), CountDist(f_si)


def unpaired_component_dist(f_broken: CountDist, f_noise: CountDist) -> CountDist:
    """All unpaired counts of one strip: broken-pair singles + noise counts."""
    return CountDist(np.convolve(f_broken.probs, f_noise.probs))


def joint_unpaired_dist(
    fsi_broken: CountDist, fs: CountDist, fi: CountDist
) -> JointCountDist:
    """Joint distribution of all counts outside the paired detection areas.

    f_si(c_s, c_i) = sum_cp fsi_broken(cp) fs(c_s-cp) fi(c_i-cp): each
    area-broken pair still contributes one count to both strips, which is
    what correlates the two margins.
    """
    k = len(fsi_broken)
    rows = k + len(fs) - 1
    cols = k + len(fi) - 1
    out = np.zeros((rows, cols))
    for cp in range(k):
        w = fsi_broken[cp]
        if w == 0.0:
            continue
        out[cp : cp + len(fs), cp : cp + len(fi)] += w * np.outer(fs.probs, fi.probs)
    return JointCountDist(out)


def component_count_dists(
    pp: CountDist,
    ps: CountDist,
    pi: CountDist,
    det: DetectorParams,
    m_c: float,
    eps: float = EPS_TRUNC,
) -> ComponentCountDists:
    """Build all five per-component photocount distributions."""
    f_ps, f_pi = broken_pair_dists(pp, det, m_c, eps)
    return ComponentCountDists(
        genuine_pairs=genuine_pair_dist(pp, det, m_c, eps),
        broken_signal=f_ps,
        broken_idler=f_pi,
        noise_signal=noise_count_dist(ps, det.eta_signal, det.dark_signal, det.pixels, eps),
        noise_idler=noise_count_dist(pi, det.eta_idler, det.dark_idler, det.pixels, eps),
    )
