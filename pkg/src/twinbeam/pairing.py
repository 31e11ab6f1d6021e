"""Random pairing statistics of unpaired signal and idler counts.

When detection areas of m_d pixels are drawn around every signal count,
unrelated idler counts can fall into them and form accidental pairs. The
basic model pairs every idler count that lands in the covered area (capped
by the number of signal counts); the refined model additionally corrects
for several idler counts competing for the same signal areas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .distributions import CountDist, JointCountDist
from .errors import ParameterError

# Conditional distributions are kept only where the accidental-pair weight
# exceeds this; lighter slices are weighted out of all downstream sums.
COND_WEIGHT_FLOOR = 1e-12


class PairingModel(str, Enum):
    BASIC = "basic"
    REFINED = "refined"


def coverage_fraction(c_s: int, m_d: float, pixels: int) -> float:
    """Mean fraction of a strip covered by c_s detection areas of m_d pixels.

    Telescoped form 1 - (1 - m_d/N)^c_s of the sequential-coverage
    recursion: each further count claims the same fraction of whatever is
    still uncovered.
    """
    if c_s < 0:
        raise ParameterError(f"count must be >= 0, got {c_s}")
    if not 0.0 <= m_d <= pixels:
        raise ParameterError(f"area extent {m_d} outside [0, {pixels}]")
    if c_s == 0:
        return 0.0
    if m_d == pixels:
        return 1.0
    return float(-np.expm1(c_s * np.log1p(-m_d / pixels)))


def overlap_correction(c_i: int, c_s: int) -> float:
    """Correction for idler detection areas overlapping within the covered
    region around c_s signal counts.

    Ratio of the with-overlap coverage 1 - (1 - 1/c_s)^c_i to the
    no-overlap reference min(c_s, c_i)/c_s. Total by convention: 1.0 when
    c_s = 0 or c_i = 0, where the correction never multiplies anything.
    """
    if c_i < 0 or c_s < 0:
        raise ParameterError("counts must be >= 0")
    if c_s == 0 or c_i == 0:
        return 1.0
    covered = 1.0 if c_s == 1 else -np.expm1(c_i * np.log1p(-1.0 / c_s))
    reference = min(c_s, c_i) / c_s
    return float(covered / reference)


def _binom_pmf_vec(n: int, p: float) -> np.ndarray:
    """Binomial pmf over k = 0..n as a vector."""
    if n == 0:
        return np.ones(1)
    if p == 0.0:
        out = np.zeros(n + 1)
        out[0] = 1.0
        return out
    if p == 1.0:
        out = np.zeros(n + 1)
        out[n] = 1.0
        return out
    k = np.arange(n + 1, dtype=np.float64)
    logpmf = (
        gammaln(n + 1.0)
        - gammaln(k + 1.0)
        - gammaln(n - k + 1.0)
        + k * np.log(p)
        + (n - k) * np.log1p(-p)
    )
    return np.exp(logpmf)


@lru_cache(maxsize=128)
def _overlap_binom_table(c_s: int, j_max: int):
    """Table G[k, j] = Binom(k; j, eta_g(j; c_s)), independent of m_d."""
    g = np.zeros((j_max + 1, j_max + 1))
    for j in range(j_max + 1):
        g[: j + 1, j] = _binom_pmf_vec(j, min(overlap_correction(j, c_s), 1.0))
    g.flags.writeable = False
    return g


def _pairing_body(c_s: int, c_i: int, eta_f: float, model: PairingModel) -> np.ndarray:
    """Unsaturated pairing weights over c_p = 0..c_i for one (c_s, c_i)."""
    outer = _binom_pmf_vec(c_i, eta_f)
    if model is PairingModel.BASIC:
        return outer
    g = _overlap_binom_table(c_s, c_i)
    return g[: c_i + 1, : c_i + 1] @ outer


def pairing_probability(
    c_p: int,
    c_s: int,
    c_i: int,
    m_d: float,
    pixels: int,
    model: PairingModel = PairingModel.REFINED,
) -> float:
    """Probability that c_s signal and c_i idler counts, all randomly
    placed, yield exactly c_p paired counts at detection-area extent m_d.

    The three-case definition: below min(c_s, c_i) the pairing weight
    applies directly; at the saturation count c_p = min(c_s, c_i) the whole
    upper tail of the weight is absorbed (a signal count pairs at most
    once); zero otherwise.
    """
    if min(c_p, c_s, c_i) < 0:
        raise ParameterError("counts must be >= 0")
    model = PairingModel(model)
    mn = min(c_s, c_i)
    if c_p > mn:
        return 0.0
    eta_f = coverage_fraction(c_s, m_d, pixels)
    body = _pairing_body(c_s, c_i, eta_f, model)
    if c_p < mn:
        return float(body[c_p])
    return float(body[mn:].sum())


def _binom_pmf_table(n_max: int, p: float) -> np.ndarray:
    """Table B[k, n] = Binom(k; n, p) for k, n = 0..n_max."""
    out = np.zeros((n_max + 1, n_max + 1))
    if p == 0.0:
        out[0, :] = 1.0
        return out
    if p == 1.0:
        np.fill_diagonal(out, 1.0)
        return out
    k = np.arange(n_max + 1, dtype=np.float64)
    n = k[None, :]
    kk = k[:, None]
    valid = kk <= n
    logpmf = (
        gammaln(n + 1.0)
        - gammaln(kk + 1.0)
        - gammaln(np.where(valid, n - kk, 0.0) + 1.0)
        + kk * np.log(p)
        + (n - kk) * np.log1p(-p)
    )
    out[valid] = np.exp(logpmf[valid])
    return out


def pairing_matrix(
    c_s_max: int,
    c_i_max: int,
    m_d: float,
    pixels: int,
    model: PairingModel = PairingModel.REFINED,
) -> np.ndarray:
    """Full pairing tensor P[c_p, c_s, c_i] for counts up to the given maxima.

    Normalized over c_p for every (c_s, c_i) cell.
    """
    model = PairingModel(model)
    p_max = min(c_s_max, c_i_max)
    out = np.zeros((p_max + 1, c_s_max + 1, c_i_max + 1))
    for c_s in range(c_s_max + 1):
        eta_f = coverage_fraction(c_s, m_d, pixels)
        # h[j, c_i] = Binom(j; c_i, eta_f); body[k, c_i] in one product.
        h = _binom_pmf_table(c_i_max, eta_f)
        if model is PairingModel.BASIC:
            body = h
        else:
            body = _overlap_binom_table(c_s, c_i_max) @ h
        for c_i in range(c_i_max + 1):
            mn = min(c_s, c_i)
            out[:mn, c_s, c_i] = body[:mn, c_i]
            out[mn, c_s, c_i] = body[mn : c_i + 1, c_i].sum()
    return out


@dataclass(frozen=True)
class AccidentalPairing:
    """Accidental-pair decomposition of an unpaired-count distribution.

    ``pair_dist`` is the distribution of accidental paired counts;
    ``conditional_unpaired[c_p]`` the joint distribution of the remaining
    unpaired counts (d_s, d_i) given c_p accidental pairs. Conditionals are
    stored only for weights above COND_WEIGHT_FLOOR.
    """

    pair_dist: CountDist
    conditional_unpaired: dict[int, JointCountDist] = field(repr=False)
    m_d: float

    def conditional_marginals(self, c_p: int) -> tuple[CountDist, CountDist]:
        cond = self.conditional_unpaired[c_p]
        return cond.marginal_signal(), cond.marginal_idler()


def accidental_pair_dist(
    fsi: JointCountDist,
    m_d: float,
    pixels: int,
    model: PairingModel = PairingModel.REFINED,
) -> AccidentalPairing:
    """Decompose an unpaired-count joint distribution under random pairing.

    Applies the pairing tensor to fsi to get the accidental-pair
    distribution and, per accidental count, the conditional joint
    distribution of what stays unpaired. Mixing the conditionals back with
    the pair weights reconstructs fsi exactly.
    """
    model = PairingModel(model)
    s_max = fsi.shape[0] - 1
    i_max = fsi.shape[1] - 1
    p = pairing_matrix(s_max, i_max, m_d, pixels, model)
    f_acc = np.einsum("psi,si->p", p, fsi.probs)
    conditionals: dict[int, JointCountDist] = {}
    for c_p in range(f_acc.size):
        w = f_acc[c_p]
        if w <= COND_WEIGHT_FLOOR:
            continue
        block = p[c_p, c_p:, c_p:] * fsi.probs[c_p:, c_p:] / w
        conditionals[c_p] = JointCountDist(block)
    return AccidentalPairing(
        pair_dist=CountDist(f_acc), conditional_unpaired=conditionals, m_d=m_d
    )


def reconstruct_unpaired(acc: AccidentalPairing, shape: tuple[int, int]) -> JointCountDist:
    """Rebuild the original unpaired-count distribution from a decomposition
    (identity check used by the validation suite)."""
    out = np.zeros(shape)
    for c_p, cond in acc.conditional_unpaired.items():
        w = acc.pair_dist[c_p]
        rows = min(cond.shape[0], shape[0] - c_p)
        cols = min(cond.shape[1], shape[1] - c_p)
        out[c_p : c_p + rows, c_p : c_p + cols] += w * cond.probs[:rows, :cols]
    return JointCountDist(out)
