"""Monte Carlo generation of two-strip frames and software pairing.

Frames carry continuous sub-pixel count coordinates (as centroided camera
frames would); pixel binarity is enforced by collapsing counts that share
an integer pixel. Pairing draws a detection area (disc of m_d pixels, or
an m_d-by-1 rectangle in one-dimensional mode) around the idler-strip
point corresponding to each signal count and matches counts one-to-one,
globally greedy by ascending pair distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import TwinBeamParams
from .detection import CorrelationProfile, DetectorParams, ProfileKind
from .errors import ParameterError

BOUNDARY_POLICIES = ("clip", "discard", "wrap")
MAPPINGS = ("identity", "mirror_x")


@dataclass(frozen=True)
class StripGeometry:
    """Strip layout shared by the signal and idler detection fields.

    ``mapping`` sends a signal position to its corresponding idler-strip
    point. ``boundary`` controls idler positions displaced outside the
    strip: clipped to the edge, discarded, or wrapped (toroidal strips;
    distances then use the wrapped metric too). ``one_dim`` switches the
    detection areas from discs to m_d-by-1 rectangles along x.
    """

    width: int = 130
    height: int = 50
    mapping: str = "identity"
    boundary: str = "clip"
    one_dim: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError("strip dimensions must be positive")
        if self.mapping not in MAPPINGS:
            raise ParameterError(f"unknown mapping {self.mapping!r}, use one of {MAPPINGS}")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ParameterError(
                f"unknown boundary policy {self.boundary!r}, use one of {BOUNDARY_POLICIES}"
            )

    @property
    def pixels(self) -> int:
        return self.width * self.height

    def corresponding(self, points: np.ndarray) -> np.ndarray:
        """Idler-strip points corresponding to signal positions."""
        if self.mapping == "identity" or points.size == 0:
            return points
        out = points.copy()
        out[:, 0] = self.width - points[:, 0]
        if self.boundary == "wrap":
            out[:, 0] %= self.width
        else:
            out[:, 0] = np.clip(out[:, 0], 0.0, np.nextafter(self.width, 0.0))
        return out

    def delta(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pairwise coordinate differences a[:, None] - b[None, :], using
        the minimum-image convention on wrapped strips."""
        d = a[:, None, :] - b[None, :, :]
        if self.boundary == "wrap":
            span = np.array([self.width, self.height], dtype=np.float64)
            d = (d + span / 2.0) % span - span / 2.0
        return d


@dataclass(frozen=True)
class Frame:
    """Count coordinates of one camera exposure, one array per strip."""

    frame_id: int
    signal: np.ndarray
    idler: np.ndarray

    def __post_init__(self):
        for name in ("signal", "idler"):
            pts = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1, 2)
            pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
            pts.flags.writeable = False
            object.__setattr__(self, name, pts)


@dataclass(frozen=True)
class PairingResult:
    """Outcome of pairing one frame at one detection-area extent."""

    paired: int
    unpaired_signal: int
    unpaired_idler: int
    pair_list: list[tuple[tuple[float, float], tuple[float, float]]]
    signal_pair_idx: np.ndarray = field(repr=False)
    idler_pair_idx: np.ndarray = field(repr=False)


def _collapse_to_pixels(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """At most one count per integer pixel; the lexicographically first
    position in a pixel is kept so the result is order-independent."""
    if len(points) == 0:
        return points.reshape(0, 2)
    order = np.lexsort((points[:, 1], points[:, 0]))
    pts = points[order]
    pix = np.floor(pts).astype(np.int64)
    flat = pix[:, 1] * width + pix[:, 0]
    _, first = np.unique(flat, return_index=True)
    return pts[np.sort(first)]


def _sample_multimode_thermal(rng: np.random.Generator, modes: float, mean_per_mode: float) -> int:
    """Photon number of a multimode thermal component (Poisson mixed over a
    Gamma-distributed intensity)."""
    if mean_per_mode == 0.0:
        return 0
    return int(rng.poisson(rng.gamma(modes, mean_per_mode)))


def _sample_offsets(rng: np.random.Generator, profile: CorrelationProfile, n: int) -> np.ndarray:
    """Pair-offset samples matching the coverage law of the profile."""
    if profile.kind is ProfileKind.GAUSSIAN2D:
        # Intensity cross-correlation exp(-(dx^2+dy^2)/R^2) with pi R^2 = m_c.
        sigma = math.sqrt(profile.extent / math.pi / 2.0)
        return rng.normal(0.0, sigma, (n, 2))
    if profile.kind is ProfileKind.GAUSSIAN1D:
        # exp(-dx^2/X^2) with 2X = m_c; offsets along x only.
        sigma = profile.extent / 2.0 / math.sqrt(2.0)
        out = np.zeros((n, 2))
        out[:, 0] = rng.normal(0.0, sigma, n)
        return out
    # Flat: uniform over a disc of area m_c.
    radius = math.sqrt(profile.extent / math.pi)
    r = radius * np.sqrt(rng.random(n))
    phi = rng.random(n) * 2.0 * math.pi
    return np.column_stack((r * np.cos(phi), r * np.sin(phi)))


def frame_rng(seed: int, frame_id: int) -> np.random.Generator:
    """Private random stream of one frame, derived from (seed, frame_id)
    so ensembles are reproducible and generation-order independent."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(frame_id)]))


def generate_frame(
    beam: TwinBeamParams,
    det: DetectorParams,
    profile: CorrelationProfile,
    geometry: StripGeometry,
    frame_id: int,
    seed: int,
) -> Frame:
    """Sample one synthetic frame.

    Pairs land uniformly in the signal strip with the idler twin displaced
    by a profile-drawn offset from the corresponding point; photons are
    detected independently with the strip efficiencies; noise photons land
    uniformly; every pixel can dark-fire with probability D. Counts
    sharing a pixel collapse to one.
    """
    if det.pixels != geometry.pixels:
        raise ParameterError(
            f"detector pixel count {det.pixels} != geometry {geometry.width}x{geometry.height}"
        )
    rng = frame_rng(seed, frame_id)
    w, h = float(geometry.width), float(geometry.height)
    hi = np.array([w, h])

    n_pairs = _sample_multimode_thermal(rng, beam.paired.modes, beam.paired.mean_per_mode)
    pair_pos = rng.random((n_pairs, 2)) * hi
    offsets = _sample_offsets(rng, profile, n_pairs)
    twin_pos = geometry.corresponding(pair_pos) + offsets
    keep_s = rng.random(n_pairs) < det.eta_signal
    keep_i = rng.random(n_pairs) < det.eta_idler

    if geometry.boundary == "wrap":
        twin_pos %= hi
    elif geometry.boundary == "clip":
        twin_pos = np.clip(twin_pos, 0.0, np.nextafter(hi, -1.0))
    else:
        inside = np.all((twin_pos >= 0.0) & (twin_pos < hi), axis=1)
        keep_i &= inside

    n_noise_s = _sample_multimode_thermal(
        rng, beam.noise_signal.modes, beam.noise_signal.mean_per_mode
    )
    noise_s = rng.random((n_noise_s, 2)) * hi
    noise_s = noise_s[rng.random(n_noise_s) < det.eta_signal]
    n_noise_i = _sample_multimode_thermal(
        rng, beam.noise_idler.modes, beam.noise_idler.mean_per_mode
    )
    noise_i = rng.random((n_noise_i, 2)) * hi
    noise_i = noise_i[rng.random(n_noise_i) < det.eta_idler]

    def dark_positions(dark_mean: float) -> np.ndarray:
        k = rng.binomial(geometry.pixels, dark_mean) if dark_mean > 0.0 else 0
        if k == 0:
            return np.empty((0, 2))
        pix = rng.choice(geometry.pixels, size=k, replace=False)
        return np.column_stack((pix % geometry.width + 0.5, pix // geometry.width + 0.5))

    dark_s = dark_positions(det.dark_signal)
    dark_i = dark_positions(det.dark_idler)

    signal = np.concatenate([pair_pos[keep_s], noise_s, dark_s])
    idler = np.concatenate([twin_pos[keep_i], noise_i, dark_i])
    return Frame(
        frame_id=frame_id,
        signal=_collapse_to_pixels(signal, geometry.width, geometry.height),
        idler=_collapse_to_pixels(idler, geometry.width, geometry.height),
    )


def generate_frames(
    beam: TwinBeamParams,
    det: DetectorParams,
    profile: CorrelationProfile,
    geometry: StripGeometry,
    n_frames: int,
    seed: int,
    first_id: int = 0,
):
    """Yield ``n_frames`` frames with ids first_id..first_id+n_frames-1."""
    for frame_id in range(first_id, first_id + n_frames):
        yield generate_frame(beam, det, profile, geometry, frame_id, seed)


def _area_reach(m_d: float, one_dim: bool) -> tuple[float, float]:
    """Half-extents (x, y) of the detection area around a point."""
    if one_dim:
        return m_d / 2.0, 0.5
    r = math.sqrt(m_d / math.pi)
    return r, r


def _eligible(d: np.ndarray, m_d: float, one_dim: bool) -> np.ndarray:
    """Boolean mask of offset vectors lying inside the detection area."""
    if one_dim:
        rx, ry = _area_reach(m_d, True)
        return (np.abs(d[..., 0]) <= rx) & (np.abs(d[..., 1]) <= ry)
    r2 = m_d / math.pi
    return d[..., 0] ** 2 + d[..., 1] ** 2 <= r2


def pair_counts(frame: Frame, m_d: float, geometry: StripGeometry) -> PairingResult:
    """Match signal to idler counts within detection areas of m_d pixels.

    Each count is used at most once; candidate pairs are taken globally in
    ascending distance between the idler count and the point corresponding
    to the signal count, with lexicographic coordinate tie-breaking.
    """
    if m_d < 0.0:
        raise ParameterError(f"detection-area extent must be >= 0, got {m_d}")
    sig, idl = frame.signal, frame.idler
    n_s, n_i = len(sig), len(idl)
    if m_d == 0.0 or n_s == 0 or n_i == 0:
        return PairingResult(
            0, n_s, n_i, [], np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        )
    d = geometry.delta(geometry.corresponding(sig), idl)
    ok = _eligible(d, m_d, geometry.one_dim)
    s_idx, i_idx = np.nonzero(ok)
    if s_idx.size == 0:
        return PairingResult(
            0, n_s, n_i, [], np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp)
        )
    d2 = d[s_idx, i_idx, 0] ** 2 + d[s_idx, i_idx, 1] ** 2
    order = np.lexsort(
        (idl[i_idx, 1], idl[i_idx, 0], sig[s_idx, 1], sig[s_idx, 0], d2)
    )
    used_s = np.zeros(n_s, dtype=bool)
    used_i = np.zeros(n_i, dtype=bool)
    ps, pi = [], []
    for k in order:
        a, b = s_idx[k], i_idx[k]
        if used_s[a] or used_i[b]:
            continue
        used_s[a] = True
        used_i[b] = True
        ps.append(a)
        pi.append(b)
    pairs = [
        (tuple(sig[a]), tuple(idl[b])) for a, b in zip(ps, pi)
    ]
    c_p = len(ps)
    return PairingResult(
        paired=c_p,
        unpaired_signal=n_s - c_p,
        unpaired_idler=n_i - c_p,
        pair_list=pairs,
        signal_pair_idx=np.asarray(ps, dtype=np.intp),
        idler_pair_idx=np.asarray(pi, dtype=np.intp),
    )


class HistogramSet:
    """Frame-count histograms accumulated at one detection-area extent."""

    def __init__(self, m_d: float, one_dim: bool = False, reduced: bool = False):
        self.m_d = float(m_d)
        self.one_dim = bool(one_dim)
        self.frames = 0
        self.joint = np.zeros((4, 4), dtype=np.int64)
        self.paired = np.zeros(4, dtype=np.int64)
        self.unpaired_joint = np.zeros((4, 4), dtype=np.int64)
        self.conditional_unpaired: dict[int, np.ndarray] = {}
        self.reduced_unpaired_joint = np.zeros((4, 4), dtype=np.int64) if reduced else None

    @staticmethod
    def _bump2(arr: np.ndarray, i: int, j: int) -> np.ndarray:
        if i >= arr.shape[0] or j >= arr.shape[1]:
            grown = np.zeros(
                (max(arr.shape[0], i + 1), max(arr.shape[1], j + 1)), dtype=np.int64
            )
            grown[: arr.shape[0], : arr.shape[1]] = arr
            arr = grown
        arr[i, j] += 1
        return arr

    def record(
        self, c_s: int, c_i: int, c_p: int, d_s_red: int | None = None, d_i_red: int | None = None
    ):
        self.frames += 1
        self.joint = self._bump2(self.joint, c_s, c_i)
        if c_p >= self.paired.size:
            grown = np.zeros(c_p + 1, dtype=np.int64)
            grown[: self.paired.size] = self.paired
            self.paired = grown
        self.paired[c_p] += 1
        d_s, d_i = c_s - c_p, c_i - c_p
        self.unpaired_joint = self._bump2(self.unpaired_joint, d_s, d_i)
        cond = self.conditional_unpaired.get(c_p)
        if cond is None:
            cond = np.zeros((4, 4), dtype=np.int64)
        self.conditional_unpaired[c_p] = self._bump2(cond, d_s, d_i)
        if self.reduced_unpaired_joint is not None:
            if d_s_red is None or d_i_red is None:
                raise ParameterError("reduced accumulation needs reduced counts")
            self.reduced_unpaired_joint = self._bump2(
                self.reduced_unpaired_joint, d_s_red, d_i_red
            )

    def merge(self, other: "HistogramSet") -> "HistogramSet":
        """Associative, commutative merge of two accumulations."""
        if other.m_d != self.m_d or (self.reduced_unpaired_joint is None) != (
            other.reduced_unpaired_joint is None
        ):
            raise ParameterError("cannot merge histogram sets with different settings")

        def add2(a, b):
            rows, cols = max(a.shape[0], b.shape[0]), max(a.shape[1], b.shape[1])
            out = np.zeros((rows, cols), dtype=np.int64)
            out[: a.shape[0], : a.shape[1]] += a
            out[: b.shape[0], : b.shape[1]] += b
            return out

        out = HistogramSet(self.m_d, self.one_dim, self.reduced_unpaired_joint is not None)
        out.frames = self.frames + other.frames
        out.joint = add2(self.joint, other.joint)
        n = max(self.paired.size, other.paired.size)
        paired = np.zeros(n, dtype=np.int64)
        paired[: self.paired.size] += self.paired
        paired[: other.paired.size] += other.paired
        out.paired = paired
        out.unpaired_joint = add2(self.unpaired_joint, other.unpaired_joint)
        for cp in set(self.conditional_unpaired) | set(other.conditional_unpaired):
            a = self.conditional_unpaired.get(cp, np.zeros((1, 1), dtype=np.int64))
            b = other.conditional_unpaired.get(cp, np.zeros((1, 1), dtype=np.int64))
            out.conditional_unpaired[cp] = add2(a, b)
        if out.reduced_unpaired_joint is not None:
            out.reduced_unpaired_joint = add2(
                self.reduced_unpaired_joint, other.reduced_unpaired_joint
            )
        return out


def sweep_frame(
    frame: Frame, m_d_grid: np.ndarray, geometry: StripGeometry, reduced: bool
):
    """Per-extent (c_p, d_s_red, d_i_red) for one frame, shared-work path.

    Candidate edges are sorted by pair distance once (same order as
    pair_counts); every extent replays the greedy matching with its own
    eligibility cut. Returns a list over the grid.
    """
    sig, idl = frame.signal, frame.idler
    n_s, n_i = len(sig), len(idl)
    out = []
    if n_s == 0 or n_i == 0:
        for _ in m_d_grid:
            out.append((0, 0, 0) if reduced else (0, None, None))
        return out
    corr = geometry.corresponding(sig)
    d = geometry.delta(corr, idl)
    one_dim = geometry.one_dim
    if one_dim:
        mask = np.abs(d[..., 1]) <= 0.5
    else:
        mask = np.ones((n_s, n_i), dtype=bool)
    s_all, i_all = np.nonzero(mask)
    d2_all = d[s_all, i_all, 0] ** 2 + d[s_all, i_all, 1] ** 2
    order = np.lexsort(
        (idl[i_all, 1], idl[i_all, 0], sig[s_all, 1], sig[s_all, 0], d2_all)
    )
    s_all, i_all = s_all[order], i_all[order]
    cut = np.abs(d[s_all, i_all, 0]) if one_dim else d2_all[order]
    if reduced:
        ds_sig = geometry.delta(sig, sig)
        di_idl = geometry.delta(idl, idl)
    for m_d in m_d_grid:
        limit = m_d / 2.0 if one_dim else m_d / math.pi
        used_s = np.zeros(n_s, dtype=bool)
        used_i = np.zeros(n_i, dtype=bool)
        c_p = 0
        for k in range(s_all.size):
            if cut[k] > limit:
                continue
            a, b = s_all[k], i_all[k]
            if used_s[a] or used_i[b]:
                continue
            used_s[a] = used_i[b] = True
            c_p += 1
        if not reduced:
            out.append((c_p, None, None))
            continue
        if c_p == 0:
            out.append((0, 0, 0))
            continue
        keep_s = _eligible(ds_sig[:, used_s], m_d, one_dim).any(axis=1)
        keep_i = _eligible(di_idl[:, used_i], m_d, one_dim).any(axis=1)
        d_s_red = int(np.count_nonzero(keep_s & ~used_s))
        d_i_red = int(np.count_nonzero(keep_i & ~used_i))
        out.append((c_p, d_s_red, d_i_red))
    return out


def sweep_and_accumulate(
    frames,
    m_d_grid,
    geometry: StripGeometry,
    reduced: bool = False,
) -> list[HistogramSet]:
    """Pair every frame at every extent of the grid and histogram the
    outcomes. ``frames`` is any iterable of Frame."""
    grid = np.asarray(m_d_grid, dtype=np.float64)
    if grid.size == 0:
        raise ParameterError("m_d grid must not be empty")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ParameterError("m_d grid must be non-negative and strictly increasing")
    sets = [HistogramSet(m, geometry.one_dim, reduced) for m in grid]
    n_frames = 0
    for frame in frames:
        n_frames += 1
        c_s, c_i = len(frame.signal), len(frame.idler)
        for hist, (c_p, d_s_red, d_i_red) in zip(sets, sweep_frame(frame, grid, geometry, reduced)):
            hist.record(c_s, c_i, c_p, d_s_red, d_i_red)
    if n_frames == 0:
        raise ParameterError("frame source is empty")
    return sets
