"""Sweep analysis: accidental-pair estimation, correlated-area extraction,
profile derivatives, one-parameter profile fits and Klyshko efficiencies.

Operates on the histogram sets produced by the simulator sweep (or by any
source providing the same histograms) and mirrors the estimation chain an
experiment would run: estimate accidental pairs by re-pairing the unpaired
counts observed at a reference extent m_d0, subtract to get the genuine
pair curve, differentiate for the correlation profile, fit the profile
extent, and read detection efficiencies off the pair-to-singles ratios.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .distributions import CountDist, JointCountDist
from .detection import ProfileKind, coverage_probability, CorrelationProfile
from .errors import NumericalError, ParameterError
from .pairing import PairingModel, pairing_matrix
from .simulator import HistogramSet

# Klyshko window: the efficiency estimate is the maximum of the pair-to-
# singles ratio for extents up to this factor above the reference m_d0
# (just above the correlated area, before accidental pairs dominate).
KLYSHKO_WINDOW_FACTOR = 1.25

BOOTSTRAP_DEFAULT = 200


@dataclass(frozen=True)
class SweepCurves:
    """Empirical curves over the detection-area grid, with bootstrap errors.

    ``errors`` maps curve names to per-point standard errors estimated by
    multinomial resampling of the underlying histograms (equivalent to a
    bootstrap over frames for per-frame statistics).
    """

    m_d_grid: np.ndarray
    frames: int
    mean_pairs: np.ndarray
    mean_acc: np.ndarray
    mean_genuine: np.ndarray
    rel_var_pairs: np.ndarray
    mean_unpaired_s: np.ndarray
    mean_unpaired_i: np.ndarray
    rel_var_unpaired_s: np.ndarray
    cov_unpaired: np.ndarray
    cov_unpaired_conditional: dict[int, np.ndarray]
    klyshko_s: np.ndarray
    klyshko_i: np.ndarray
    klyshko_s_reg: np.ndarray
    klyshko_i_reg: np.ndarray
    mean_red_s: np.ndarray | None
    mean_red_i: np.ndarray | None
    cov_red_fluct: np.ndarray | None
    mean_cs: float
    mean_ci: float
    rel_var_cs: float
    covariance: float
    sub_shot_noise: float
    m_d0: float
    m_d0_used: float
    errors: dict[str, np.ndarray] = field(repr=False)


@dataclass(frozen=True)
class ProfileEstimate:
    """Correlation-profile reconstruction from the genuine-pair curve."""

    m_d_grid: np.ndarray
    t_app: np.ndarray
    t_app_err: np.ndarray
    fitted_extent: float
    fitted_extent_err: float
    m_d0: float
    fit_residual: float
    t_integral: float


def normalized_joint(hist: np.ndarray, frames: int) -> JointCountDist:
    """Histogram matrix -> joint probability distribution."""
    if frames <= 0:
        raise ParameterError("histogram holds no frames")
    return JointCountDist(hist / float(frames))


def estimate_accidental_from_data(
    hist_unpaired_at_md0: JointCountDist,
    m_d: float,
    pixels: int,
    model: PairingModel = PairingModel.REFINED,
) -> CountDist:
    """Accidental-pair distribution estimated from observed unpaired counts.

    Re-applies the random-pairing probability at the queried extent m_d to
    the unpaired-count distribution observed at the reference extent, which
    is the only pool an experiment can provide.
    """
    if hist_unpaired_at_md0.mass <= 0.0:
        raise ParameterError("empty unpaired-count histogram")
    p = pairing_matrix(
        hist_unpaired_at_md0.shape[0] - 1,
        hist_unpaired_at_md0.shape[1] - 1,
        m_d,
        pixels,
        model,
    )
    return CountDist(np.einsum("psi,si->p", p, hist_unpaired_at_md0.probs))


def find_md0(m_d_grid, cov_values) -> float:
    """Extent where the unpaired-count covariance crosses zero.

    Linear interpolation between the bracketing grid points of the first
    positive-to-negative crossing.
    """
    grid = np.asarray(m_d_grid, dtype=np.float64)
    cov = np.asarray(cov_values, dtype=np.float64)
    if grid.size < 2 or grid.size != cov.size:
        raise ParameterError("need matching grids with at least two points")
    pos = cov[:-1] > 0.0
    neg = cov[1:] <= 0.0
    idx = np.nonzero(pos & neg)[0]
    if idx.size == 0:
        raise NumericalError(
            "unpaired-count covariance has no positive-to-negative crossing "
            "on the grid; the correlated area is not resolved"
        )
    i = int(idx[0])
    x0, x1, y0, y1 = grid[i], grid[i + 1], cov[i], cov[i + 1]
    return float(x0 - y0 * (x1 - x0) / (y1 - y0))


def genuine_curve(
    m_d_grid, mean_pairs, mean_acc, normalize_at: float | None = None
) -> np.ndarray:
    """Normalized genuine-pair curve (pairs minus estimated accidentals).

    Normalization defaults to the largest grid extent; a warning is issued
    when the unnormalized curve decreases there, which indicates the
    accidental estimate is overshooting.
    """
    grid = np.asarray(m_d_grid, dtype=np.float64)
    raw = np.asarray(mean_pairs, dtype=np.float64) - np.asarray(mean_acc, dtype=np.float64)
    if normalize_at is None:
        normalize_at = float(grid[-1])
    norm = float(np.interp(normalize_at, grid, raw))
    if norm <= 0.0:
        raise NumericalError("genuine-pair curve non-positive at normalization extent")
    if raw.size >= 2 and normalize_at >= grid[-1] and raw[-1] < raw[-2]:
        warnings.warn(
            "genuine-pair curve decreases at the normalization extent; "
            "accidental counts are likely overestimated there",
            stacklevel=2,
        )
    return raw / norm


def profile_from_curve(m_d_grid, curve, smoothing: int = 0) -> np.ndarray:
    """Correlation-profile values as the derivative of the normalized
    genuine-pair curve (second-order central differences, one-sided at the
    edges; optional odd moving-average window applied to the curve first).
    """
    grid = np.asarray(m_d_grid, dtype=np.float64)
    y = np.asarray(curve, dtype=np.float64)
    if grid.size < 3:
        raise ParameterError("need at least three grid points to differentiate")
    if smoothing:
        if smoothing % 2 == 0:
            raise ParameterError("smoothing window must be odd")
        kernel = np.ones(smoothing) / smoothing
        pad = smoothing // 2
        y = np.convolve(np.pad(y, pad, mode="edge"), kernel, mode="valid")
    return np.gradient(y, grid)


def fit_gaussian_extent(
    m_d_grid,
    curve,
    kind: ProfileKind = ProfileKind.GAUSSIAN2D,
    window_max: float | None = None,
) -> tuple[float, float]:
    """One-parameter least-squares fit of the coverage law to the
    normalized genuine-pair curve.

    Fits 1 - exp(-m_d/m_c) (2-d), erf(m_d/m_c) (1-d) or the flat ramp over
    grid points with m_d <= window_max. A coarse logarithmic scan brackets
    the minimum, then bounded golden-section/parabolic refinement narrows
    it. Returns (fitted extent, sum of squared residuals).
    """
    grid = np.asarray(m_d_grid, dtype=np.float64)
    y = np.asarray(curve, dtype=np.float64)
    kind = ProfileKind(kind)
    mask = np.ones(grid.size, dtype=bool) if window_max is None else grid <= window_max
    if mask.sum() < 2:
        raise ParameterError("fit window holds fewer than two grid points")
    gx, gy = grid[mask], y[mask]

    def sse(m_c: float) -> float:
        prof = CorrelationProfile(kind, m_c)
        model = np.array([coverage_probability(m, prof) for m in gx])
        return float(np.sum((gy - model) ** 2))

    scan = np.geomspace(max(grid[0] / 4.0, 1e-3), 4.0 * grid[-1], 60)
    values = [sse(m) for m in scan]
    best = int(np.argmin(values))
    lo = scan[max(best - 1, 0)]
    hi = scan[min(best + 1, scan.size - 1)]
    res = minimize_scalar(sse, bounds=(lo, hi), method="bounded")
    if not res.success:
        raise NumericalError(
            "profile-extent fit did not converge; scan values "
            + ", ".join(f"{m:.3g}:{v:.3g}" for m, v in zip(scan, values))
        )
    return float(res.x), float(res.fun)


def klyshko_point(m_d_grid, ratio_curve, m_d0: float) -> float:
    """Efficiency estimate: maximum of the pair-to-singles ratio over
    extents in (m_d0, KLYSHKO_WINDOW_FACTOR * m_d0]."""
    grid = np.asarray(m_d_grid, dtype=np.float64)
    ratio = np.asarray(ratio_curve, dtype=np.float64)
    top = KLYSHKO_WINDOW_FACTOR * m_d0
    inside = (grid > m_d0) & (grid <= top)
    candidates = [float(np.interp(top, grid, ratio))]
    if np.any(inside):
        candidates.append(float(ratio[inside].max()))
    return max(candidates)


def klyshko_efficiency(
    sweep: "SweepCurves", mean_counts_i: float, mean_counts_s: float
) -> tuple[float, float]:
    """Klyshko efficiency estimates (signal, idler) from a sweep."""
    if mean_counts_i <= 0.0 or mean_counts_s <= 0.0:
        raise ParameterError("mean count in the conjugate strip must be positive")
    eta_s = klyshko_point(sweep.m_d_grid, sweep.mean_pairs / mean_counts_i, sweep.m_d0_used)
    eta_i = klyshko_point(sweep.m_d_grid, sweep.mean_pairs / mean_counts_s, sweep.m_d0_used)
    return eta_s, eta_i


def _hist_mean_var(hist: np.ndarray, frames: int) -> tuple[float, float]:
    k = np.arange(hist.size, dtype=np.float64)
    m = float(k @ hist) / frames
    v = float(k**2 @ hist) / frames - m * m
    return m, v


def _joint_stats(hist: np.ndarray, frames: int):
    """(mean_s, mean_i, var_s, var_i, corr) of a 2-d count histogram."""
    p = hist / float(frames)
    s = np.arange(p.shape[0], dtype=np.float64)
    i = np.arange(p.shape[1], dtype=np.float64)
    ps, pi = p.sum(axis=1), p.sum(axis=0)
    ms, mi = float(s @ ps), float(i @ pi)
    vs, vi = float(s**2 @ ps) - ms * ms, float(i**2 @ pi) - mi * mi
    cov = float(s @ p @ i) - ms * mi
    corr = cov / np.sqrt(vs * vi) if vs > 0 and vi > 0 else float("nan")
    return ms, mi, vs, vi, corr


def analyze_sweep(
    hist_sets: list[HistogramSet],
    pixels: int,
    model: PairingModel = PairingModel.REFINED,
    m_d0_override: float | None = None,
    normalize_at: float | None = None,
    bootstrap: int = BOOTSTRAP_DEFAULT,
    seed: int = 1,
    conditional_pairs: tuple[int, ...] = (0, 1, 2),
) -> SweepCurves:
    """Assemble all empirical sweep curves from per-extent histogram sets.

    The accidental-pair curve uses the unpaired-count histogram observed at
    the grid point nearest to m_d0 (the covariance zero crossing unless
    overridden), held fixed across the queried extents.
    """
    if not hist_sets:
        raise ParameterError("no histogram sets to analyze")
    hist_sets = sorted(hist_sets, key=lambda h: h.m_d)
    grid = np.array([h.m_d for h in hist_sets])
    frames = hist_sets[0].frames
    if any(h.frames != frames for h in hist_sets):
        raise ParameterError("histogram sets disagree on the frame count")
    n = grid.size
    rng = np.random.default_rng(seed)

    mean_pairs = np.empty(n)
    rel_var_pairs = np.empty(n)
    mean_un_s = np.empty(n)
    mean_un_i = np.empty(n)
    rel_var_un_s = np.empty(n)
    cov_un = np.empty(n)
    for k, h in enumerate(hist_sets):
        m, v = _hist_mean_var(h.paired, frames)
        mean_pairs[k] = m
        rel_var_pairs[k] = v / (m * m) if m > 0 else np.nan
        ms, mi, vs, vi, corr = _joint_stats(h.unpaired_joint, frames)
        mean_un_s[k], mean_un_i[k] = ms, mi
        rel_var_un_s[k] = vs / (ms * ms) if ms > 0 else np.nan
        cov_un[k] = corr

    cond_curves: dict[int, np.ndarray] = {}
    for cp in conditional_pairs:
        vals = np.full(n, np.nan)
        for k, h in enumerate(hist_sets):
            sub = h.conditional_unpaired.get(cp)
            if sub is not None and sub.sum() >= 100:
                vals[k] = _joint_stats(sub, int(sub.sum()))[4]
        cond_curves[cp] = vals

    m_d0 = find_md0(grid, cov_un)
    m_d0_used = float(m_d0_override) if m_d0_override is not None else m_d0
    anchor = int(np.argmin(np.abs(grid - m_d0_used)))
    pool = normalized_joint(hist_sets[anchor].unpaired_joint, frames)
    # cp-expectation kernels: mean_acc(m_d) = sum_k A_k * pool, reused by
    # the bootstrap resamples below.
    kernels = []
    for m_d in grid:
        p = pairing_matrix(pool.shape[0] - 1, pool.shape[1] - 1, m_d, pixels, model)
        kernels.append(np.tensordot(np.arange(p.shape[0], dtype=np.float64), p, axes=1))
    mean_acc = np.array([(a * pool.probs).sum() for a in kernels])
    mean_genuine = mean_pairs - mean_acc

    ms_all, mi_all, vs_all, _, _ = _joint_stats(hist_sets[0].joint, frames)
    klyshko_s = mean_pairs / mi_all
    klyshko_i = mean_pairs / ms_all
    klyshko_s_reg = mean_genuine / mi_all
    klyshko_i_reg = mean_genuine / ms_all

    reduced = hist_sets[0].reduced_unpaired_joint is not None
    mean_red_s = np.empty(n) if reduced else None
    mean_red_i = np.empty(n) if reduced else None
    cov_red = np.empty(n) if reduced else None
    if reduced:
        for k, h in enumerate(hist_sets):
            ms, mi, _, _, corr = _joint_stats(h.reduced_unpaired_joint, frames)
            mean_red_s[k], mean_red_i[k], cov_red[k] = ms, mi, corr

    _, _, _, _, corr_all = _joint_stats(hist_sets[0].joint, frames)
    var_s = vs_all
    s_idx = np.arange(hist_sets[0].joint.shape[0], dtype=np.float64)
    i_idx = np.arange(hist_sets[0].joint.shape[1], dtype=np.float64)
    pj = hist_sets[0].joint / frames
    vi_all = float(i_idx**2 @ pj.sum(axis=0)) - mi_all**2
    cov_all = float(s_idx @ pj @ i_idx) - ms_all * mi_all
    sub_shot = (var_s + vi_all - 2 * cov_all) / (ms_all + mi_all)

    errors = _bootstrap_errors(
        hist_sets, kernels, anchor, frames, bootstrap, rng, reduced
    )

    return SweepCurves(
        m_d_grid=grid,
        frames=frames,
        mean_pairs=mean_pairs,
        mean_acc=mean_acc,
        mean_genuine=mean_genuine,
        rel_var_pairs=rel_var_pairs,
        mean_unpaired_s=mean_un_s,
        mean_unpaired_i=mean_un_i,
        rel_var_unpaired_s=rel_var_un_s,
        cov_unpaired=cov_un,
        cov_unpaired_conditional=cond_curves,
        klyshko_s=klyshko_s,
        klyshko_i=klyshko_i,
        klyshko_s_reg=klyshko_s_reg,
        klyshko_i_reg=klyshko_i_reg,
        mean_red_s=mean_red_s,
        mean_red_i=mean_red_i,
        cov_red_fluct=cov_red,
        mean_cs=ms_all,
        mean_ci=mi_all,
        rel_var_cs=var_s / (ms_all * ms_all),
        covariance=corr_all,
        sub_shot_noise=sub_shot,
        m_d0=m_d0,
        m_d0_used=m_d0_used,
        errors=errors,
    )


def _resample2(rng, hist, frames):
    flat = hist.astype(np.float64).ravel()
    return rng.multinomial(frames, flat / flat.sum()).reshape(hist.shape)


def _bootstrap_errors(hist_sets, kernels, anchor, frames, n_boot, rng, reduced):
    """Multinomial-bootstrap standard errors for the sweep curves.

    Per-frame statistics depend on their histogram only, so multinomial
    resampling of the histogram equals a bootstrap over frames. Composite
    quantities (genuine curve) resample their two inputs independently.
    """
    n = len(hist_sets)
    names = ["mean_pairs", "mean_unpaired_s", "cov_unpaired", "mean_acc", "mean_genuine"]
    if reduced:
        names += ["mean_red_s", "cov_red_fluct"]
    if n_boot <= 1:
        return {name: np.zeros(n) for name in names}
    samples = {name: np.empty((n_boot, n)) for name in names}
    pool_hist = hist_sets[anchor].unpaired_joint
    for b in range(n_boot):
        pool_b = _resample2(rng, pool_hist, frames) / frames
        for k, h in enumerate(hist_sets):
            paired_b = rng.multinomial(frames, h.paired / h.paired.sum())
            m, _ = _hist_mean_var(paired_b, frames)
            samples["mean_pairs"][b, k] = m
            uj_b = _resample2(rng, h.unpaired_joint, frames)
            ms, _, _, _, corr = _joint_stats(uj_b, frames)
            samples["mean_unpaired_s"][b, k] = ms
            samples["cov_unpaired"][b, k] = corr
            acc = float((kernels[k][: pool_b.shape[0], : pool_b.shape[1]] * pool_b).sum())
            samples["mean_acc"][b, k] = acc
            samples["mean_genuine"][b, k] = m - acc
            if reduced:
                rj_b = _resample2(rng, h.reduced_unpaired_joint, frames)
                mrs, _, _, _, rcorr = _joint_stats(rj_b, frames)
                samples["mean_red_s"][b, k] = mrs
                samples["cov_red_fluct"][b, k] = rcorr
    return {name: np.nanstd(vals, axis=0, ddof=1) for name, vals in samples.items()}


def estimate_profile(
    sweep: SweepCurves,
    kind: ProfileKind = ProfileKind.GAUSSIAN2D,
    normalize_at: float | None = None,
    smoothing: int = 0,
    bootstrap: int = BOOTSTRAP_DEFAULT,
    seed: int = 2,
) -> ProfileEstimate:
    """Full profile reconstruction: normalized genuine curve, derivative,
    extent fit inside the window m_d <= 2 * m_d0, and bootstrap errors
    propagated through the same chain."""
    grid = sweep.m_d_grid
    curve = genuine_curve(grid, sweep.mean_pairs, sweep.mean_acc, normalize_at)
    t_app = profile_from_curve(grid, curve, smoothing)
    window = 2.0 * sweep.m_d0_used
    extent, residual = fit_gaussian_extent(grid, curve, kind, window)
    rng = np.random.default_rng(seed)
    se_pairs = sweep.errors.get("mean_pairs", np.zeros(grid.size))
    se_acc = sweep.errors.get("mean_acc", np.zeros(grid.size))
    t_samples = np.empty((max(bootstrap, 2), grid.size))
    e_samples = np.empty(max(bootstrap, 2))
    for b in range(max(bootstrap, 2)):
        noisy = (
            sweep.mean_pairs
            + rng.normal(0.0, 1.0, grid.size) * se_pairs
            - (sweep.mean_acc + rng.normal(0.0, 1.0, grid.size) * se_acc)
        )
        norm_pt = float(grid[-1]) if normalize_at is None else normalize_at
        curve_b = noisy / np.interp(norm_pt, grid, noisy)
        t_samples[b] = profile_from_curve(grid, curve_b, smoothing)
        e_samples[b] = fit_gaussian_extent(grid, curve_b, kind, window)[0]
    return ProfileEstimate(
        m_d_grid=grid,
        t_app=t_app,
        t_app_err=t_samples.std(axis=0, ddof=1),
        fitted_extent=extent,
        fitted_extent_err=float(e_samples.std(ddof=1)),
        m_d0=sweep.m_d0,
        fit_residual=residual,
        t_integral=float(np.trapezoid(t_app, grid)),
    )
