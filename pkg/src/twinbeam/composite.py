"""Overall joint photocount distributions and scalar statistics.

Combines the genuine-pair, accidental-pair and unpaired pieces into the
distributions an experiment actually sees: the joint count distribution
of the two strips, the paired-count distribution, the unpaired-count
distributions, and their noise-reduced variants where unpaired counts are
kept only inside detection areas around identified pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import (
    EPS_TRUNC,
    CountDist,
    JointCountDist,
    TwinBeamParams,
    component_dist,
)
from .detection import (
    CorrelationProfile,
    DetectorParams,
    component_count_dists,
    coverage_probability,
    joint_unpaired_dist,
    split_genuine_pairs,
    thinning_matrix,
    unpaired_component_dist,
)
from .errors import ParameterError
from .pairing import (
    COND_WEIGHT_FLOOR,
    AccidentalPairing,
    PairingModel,
    accidental_pair_dist,
    coverage_fraction,
)

# Trailing support below this total mass is trimmed between pipeline
# stages; two orders under EPS_TRUNC so trimming never dominates the
# truncation budget.
TRIM_EPS = 1e-13


@dataclass(frozen=True)
class ModelOutputs:
    """All model distributions at one detection-area extent m_d."""

    overall_joint: JointCountDist
    paired: CountDist
    unpaired_joint: JointCountDist
    unpaired_signal: CountDist
    unpaired_idler: CountDist
    reduced_joint: JointCountDist | None
    reduced_unpaired_joint: JointCountDist | None
    reduced_unpaired_signal: CountDist | None
    reduced_unpaired_idler: CountDist | None
    m_d: float
    genuine: CountDist
    accidental: AccidentalPairing


@dataclass(frozen=True)
class ScalarStats:
    """Moment summary of a joint count distribution.

    ``covariance`` is the normalized fluctuation covariance (NaN when a
    marginal has zero variance); ``sub_shot_noise`` the variance of the
    count difference over the total mean count.
    """

    mean_s: float
    mean_i: float
    mean_pairs: float
    rel_var_cp: float
    rel_var_ds: float
    covariance: float
    sub_shot_noise: float


def overall_joint(fp_reg: CountDist, acc: AccidentalPairing) -> JointCountDist:
    """Joint signal-idler photocount distribution F(c_s, c_i).

    Mixture over genuine pairs g and accidental pairs a of the conditional
    unpaired distribution, shifted by the total paired count g + a.
    """
    f_acc = acc.pair_dist
    if not acc.conditional_unpaired:
        raise ParameterError("accidental decomposition holds no conditionals")
    max_rows = max(c.shape[0] for c in acc.conditional_unpaired.values())
    max_cols = max(c.shape[1] for c in acc.conditional_unpaired.values())
    shift_max = fp_reg.n_max + f_acc.n_max
    out = np.zeros((shift_max + max_rows, shift_max + max_cols))
    for a, cond in acc.conditional_unpaired.items():
        w_acc = f_acc[a]
        for g in range(len(fp_reg)):
            w = fp_reg[g] * w_acc
            if w <= 0.0:
                continue
            r, c = cond.shape
            s = g + a
            out[s : s + r, s : s + c] += w * cond.probs
    return JointCountDist(out)


def paired_dist(fp_reg: CountDist, fp_acc: CountDist) -> CountDist:
    """Distribution F_p of all paired counts, genuine plus accidental."""
    return CountDist(np.convolve(fp_reg.probs, fp_acc.probs))


def unpaired_joint(acc: AccidentalPairing) -> JointCountDist:
    """Joint distribution F_si of unpaired counts after the pairing step."""
    max_rows = max(c.shape[0] for c in acc.conditional_unpaired.values())
    max_cols = max(c.shape[1] for c in acc.conditional_unpaired.values())
    out = np.zeros((max_rows, max_cols))
    for a, cond in acc.conditional_unpaired.items():
        r, c = cond.shape
        out[:r, :c] += acc.pair_dist[a] * cond.probs
    return JointCountDist(out)


def unpaired_marginals(acc: AccidentalPairing) -> tuple[CountDist, CountDist]:
    """Marginal unpaired-count distributions F_s and F_i."""
    joint = unpaired_joint(acc)
    return joint.marginal_signal(), joint.marginal_idler()


def reduced_dists(
    fp_reg: CountDist,
    acc: AccidentalPairing,
    m_d: float,
    pixels: int,
    min_total_pairs: int = 0,
) -> tuple[JointCountDist, JointCountDist, CountDist, CountDist]:
    """Noise-reduced distributions: unpaired counts survive only inside
    detection areas drawn around the identified paired counts.

    Retention is binomial with probability eta_f(t; m_d) evaluated at the
    total (genuine + accidental) paired count t of the frame. Frames with
    t = 0 keep nothing. ``min_total_pairs`` restricts the mixture to
    frames with at least that many paired counts (renormalized), which is
    how conditioned reduced covariances are formed.

    Returns (F_red, F_si_red, F_s_red, F_i_red).
    """
    f_acc = acc.pair_dist
    max_rows = max(c.shape[0] for c in acc.conditional_unpaired.values())
    max_cols = max(c.shape[1] for c in acc.conditional_unpaired.values())
    t_max = fp_reg.n_max + f_acc.n_max
    size = max(max_rows, max_cols)
    f_si_red = np.zeros((max_rows, max_cols))
    f_red = np.zeros((t_max + max_rows, t_max + max_cols))
    total_weight = 0.0
    for t in range(min_total_pairs, t_max + 1):
        theta = thinning_matrix(size, coverage_fraction(t, m_d, pixels))
        for a, cond in acc.conditional_unpaired.items():
            g = t - a
            if g < 0 or g > fp_reg.n_max:
                continue
            w = fp_reg[g] * f_acc[a]
            if w <= COND_WEIGHT_FLOOR * 1e-3:
                continue
            r, c = cond.shape
            thinned = theta[:r, :r] @ cond.probs @ theta[:c, :c].T
            f_si_red[:r, :c] += w * thinned
            f_red[t : t + r, t : t + c] += w * thinned
            total_weight += w
    if min_total_pairs > 0:
        if total_weight <= 0.0:
            raise ParameterError("no frames satisfy the paired-count condition")
        f_si_red /= total_weight
        f_red /= total_weight
    joint_red = JointCountDist(f_red)
    si_red = JointCountDist(f_si_red)
    return joint_red, si_red, si_red.marginal_signal(), si_red.marginal_idler()


def scalar_stats(
    joint: JointCountDist,
    paired: CountDist | None = None,
    unpaired_signal: CountDist | None = None,
) -> ScalarStats:
    """Scalar statistics of a joint count distribution.

    ``paired`` and ``unpaired_signal`` optionally supply the paired-count
    and unpaired-signal distributions whose relative variances belong in
    the summary; they are NaN when omitted.
    """
    mean_s, mean_i = joint.mean_signal(), joint.mean_idler()
    var_s = joint.marginal_signal().variance()
    var_i = joint.marginal_idler().variance()
    cov = joint.covariance()
    corr = joint.correlation()
    denom = mean_s + mean_i
    r = (var_s + var_i - 2.0 * cov) / denom if denom > 0 else float("nan")
    return ScalarStats(
        mean_s=mean_s,
        mean_i=mean_i,
        mean_pairs=paired.mean() if paired is not None else float("nan"),
        rel_var_cp=paired.rel_variance() if paired is not None else float("nan"),
        rel_var_ds=(
            unpaired_signal.rel_variance() if unpaired_signal is not None else float("nan")
        ),
        covariance=corr,
        sub_shot_noise=r,
    )


@dataclass(frozen=True)
class ModelCurves:
    """Analytic sweep of the model over a detection-area grid.

    Every array is aligned with ``m_d_grid``. ``cov_unpaired_conditional``
    maps a paired count to the conditioned unpaired-count correlation
    curve. Global (m_d-independent) scalars come from the overall joint
    distribution.
    """

    m_d_grid: np.ndarray
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
    mean_red_s: np.ndarray
    mean_red_i: np.ndarray
    rel_var_red_s: np.ndarray
    cov_red_number: np.ndarray
    cov_red_fluct: np.ndarray
    cov_red_fluct_1plus: np.ndarray
    mean_cs: float
    mean_ci: float
    rel_var_cs: float
    covariance: float
    sub_shot_noise: float


class TwinBeamCountModel:
    """End-to-end analytic model for one beam/detector/profile setting.

    Precomputes everything independent of the detection-area extent; the
    per-extent decomposition is produced by :meth:`outputs` and swept on a
    grid by :meth:`curves`.
    """

    def __init__(
        self,
        beam: TwinBeamParams,
        det: DetectorParams,
        profile: CorrelationProfile,
        eps: float = EPS_TRUNC,
        trim_eps: float = TRIM_EPS,
    ):
        self.beam = beam
        self.det = det
        self.profile = profile
        self.eps = eps
        pp = component_dist(beam.paired, eps=eps)
        ps = component_dist(beam.noise_signal, eps=eps)
        pi = component_dist(beam.noise_idler, eps=eps)
        comps = component_count_dists(pp, ps, pi, det, profile.extent, eps)
        self.components = comps
        self.genuine_all = comps.genuine_pairs.trimmed(trim_eps)
        self.unpaired_s = unpaired_component_dist(
            comps.broken_signal, comps.noise_signal
        ).trimmed(trim_eps)
        self.unpaired_i = unpaired_component_dist(
            comps.broken_idler, comps.noise_idler
        ).trimmed(trim_eps)
        # Overall joint counts: genuine pairs add to both strips, the rest
        # is per-strip; independent of m_d, used for global scalars.
        self.overall = joint_unpaired_dist(
            self.genuine_all, self.unpaired_s, self.unpaired_i
        )
        self._trim_eps = trim_eps

    def unpaired_pool(self, m_d: float) -> tuple[CountDist, JointCountDist]:
        """Registered-pair distribution and unpaired-count pool at m_d."""
        eta_d = coverage_probability(m_d, self.profile)
        f_reg, f_broken_area = split_genuine_pairs(
            self.genuine_all, eta_d, self.det.pixels
        )
        fsi = joint_unpaired_dist(
            f_broken_area.trimmed(self._trim_eps), self.unpaired_s, self.unpaired_i
        ).trimmed(self._trim_eps)
        return f_reg.trimmed(self._trim_eps), fsi

    def outputs(
        self,
        m_d: float,
        model: PairingModel = PairingModel.REFINED,
        reduced: bool = True,
    ) -> ModelOutputs:
        f_reg, fsi = self.unpaired_pool(m_d)
        acc = accidental_pair_dist(fsi, m_d, self.det.pixels, model)
        f_si_joint = unpaired_joint(acc)
        outs = dict(
            overall_joint=overall_joint(f_reg, acc),
            paired=paired_dist(f_reg, acc.pair_dist),
            unpaired_joint=f_si_joint,
            unpaired_signal=f_si_joint.marginal_signal(),
            unpaired_idler=f_si_joint.marginal_idler(),
            reduced_joint=None,
            reduced_unpaired_joint=None,
            reduced_unpaired_signal=None,
            reduced_unpaired_idler=None,
            m_d=m_d,
            genuine=f_reg,
            accidental=acc,
        )
        if reduced:
            f_red, fsi_red, fs_red, fi_red = reduced_dists(
                f_reg, acc, m_d, self.det.pixels
            )
            outs.update(
                reduced_joint=f_red,
                reduced_unpaired_joint=fsi_red,
                reduced_unpaired_signal=fs_red,
                reduced_unpaired_idler=fi_red,
            )
        return ModelOutputs(**outs)

    def conditional_unpaired(self, out: ModelOutputs, total_pairs: int) -> JointCountDist:
        """Unpaired-count joint distribution conditioned on the total
        (genuine + accidental) paired count of the frame."""
        f_reg, acc = out.genuine, out.accidental
        weight = out.paired[total_pairs] if total_pairs <= out.paired.n_max else 0.0
        if weight <= 0.0:
            raise ParameterError(f"paired count {total_pairs} has zero probability")
        max_rows = max(c.shape[0] for c in acc.conditional_unpaired.values())
        max_cols = max(c.shape[1] for c in acc.conditional_unpaired.values())
        mix = np.zeros((max_rows, max_cols))
        for a, cond in acc.conditional_unpaired.items():
            g = total_pairs - a
            if g < 0 or g > f_reg.n_max:
                continue
            r, c = cond.shape
            mix[:r, :c] += f_reg[g] * acc.pair_dist[a] * cond.probs
        return JointCountDist(mix / weight)

    def global_stats(self) -> ScalarStats:
        """m_d-independent scalars of the overall joint distribution."""
        return scalar_stats(
            self.overall, unpaired_signal=None, paired=None
        )

    def curves(
        self,
        m_d_grid,
        model: PairingModel = PairingModel.REFINED,
        reduced: bool = True,
        conditional_pairs: tuple[int, ...] = (0, 1, 2),
    ) -> ModelCurves:
        grid = np.asarray(m_d_grid, dtype=np.float64)
        if grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise ParameterError("m_d grid must be non-empty and strictly increasing")
        n = grid.size
        cols = {
            name: np.full(n, np.nan)
            for name in (
                "mean_pairs mean_acc mean_genuine rel_var_pairs mean_unpaired_s "
                "mean_unpaired_i rel_var_unpaired_s cov_unpaired klyshko_s "
                "klyshko_i klyshko_s_reg klyshko_i_reg mean_red_s mean_red_i "
                "rel_var_red_s cov_red_number cov_red_fluct cov_red_fluct_1plus"
            ).split()
        }
        cond_curves = {cp: np.full(n, np.nan) for cp in conditional_pairs}
        mean_cs, mean_ci = self.overall.mean_signal(), self.overall.mean_idler()
        for k, m_d in enumerate(grid):
            out = self.outputs(m_d, model, reduced=reduced)
            cols["mean_pairs"][k] = out.paired.mean()
            cols["mean_acc"][k] = out.accidental.pair_dist.mean()
            cols["mean_genuine"][k] = out.genuine.mean()
            cols["rel_var_pairs"][k] = out.paired.rel_variance()
            cols["mean_unpaired_s"][k] = out.unpaired_signal.mean()
            cols["mean_unpaired_i"][k] = out.unpaired_idler.mean()
            cols["rel_var_unpaired_s"][k] = out.unpaired_signal.rel_variance()
            cols["cov_unpaired"][k] = out.unpaired_joint.correlation()
            cols["klyshko_s"][k] = out.paired.mean() / mean_ci
            cols["klyshko_i"][k] = out.paired.mean() / mean_cs
            cols["klyshko_s_reg"][k] = out.genuine.mean() / mean_ci
            cols["klyshko_i_reg"][k] = out.genuine.mean() / mean_cs
            for cp in conditional_pairs:
                if cp <= out.paired.n_max and out.paired[cp] > 1e-9:
                    cond_curves[cp][k] = self.conditional_unpaired(out, cp).correlation()
            if reduced:
                fsi_red = out.reduced_unpaired_joint
                cols["mean_red_s"][k] = out.reduced_unpaired_signal.mean()
                cols["mean_red_i"][k] = out.reduced_unpaired_idler.mean()
                cols["rel_var_red_s"][k] = out.reduced_unpaired_signal.rel_variance()
                ds2 = out.reduced_unpaired_signal.moment(2)
                di2 = out.reduced_unpaired_idler.moment(2)
                if ds2 > 0 and di2 > 0:
                    cols["cov_red_number"][k] = fsi_red.raw_cross_moment() / np.sqrt(
                        ds2 * di2
                    )
                cols["cov_red_fluct"][k] = fsi_red.correlation()
                _, si_red1, _, _ = reduced_dists(
                    out.genuine, out.accidental, m_d, self.det.pixels, min_total_pairs=1
                )
                cols["cov_red_fluct_1plus"][k] = si_red1.correlation()
        g = self.global_stats()
        return ModelCurves(
            m_d_grid=grid,
            cov_unpaired_conditional=cond_curves,
            mean_cs=mean_cs,
            mean_ci=mean_ci,
            rel_var_cs=self.overall.marginal_signal().rel_variance(),
            covariance=g.covariance,
            sub_shot_noise=g.sub_shot_noise,
            **cols,
        )
