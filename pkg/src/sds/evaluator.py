"""Quantitative metrics: contact matching, gait classification, DTW with ICP
pre-alignment, moving-average smoothing, the stability-to-speed score and
VLM score-vector parsing."""
import re
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from .errors import (DegenerateGeometry, InvalidInput, InvalidWindow, NoCommonKeypoints,
                     ScoreOutOfRange, ScoreParseError)
from .gaits import GAIT_LABELS, GaitTemplate, cycle_fraction, reference_gait

# ---------------------------------------------------------------------------
# contact matching


@dataclass
class MatchReport:
    percent: float
    best_shift: float          # template phase offset, cycle fraction in [0, 1)
    per_leg: np.ndarray        # agreement per leg in [0, 1]
    frequency: float           # fitted gait frequency (Hz)
    duty: float                # duty used for the ideal sequence

    def to_json(self):
        return {"percent": self.percent, "best_shift": self.best_shift,
                "per_leg": [float(value) for value in self.per_leg], "frequency": self.frequency, "duty": self.duty}


def ideal_contacts(phase, frequency, duty, shift, duration, dt):
    """Template contact matrix (4 x duration): stance iff fract(f t + shift + phase_i) < duty."""
    times = np.arange(duration) * dt
    frac = cycle_fraction(frequency * times[None, :] + shift + np.asarray(phase, dtype=float)[:, None])
    return frac < duty


def dominant_period(matrix):
    """Dominant contact period in samples from the per-leg autocorrelation.

    Autocorrelations are summed over legs rather than taken of the summed
    contact signal: for a duty-0.5 trot or pace the leg sum is constant.
    Returns None for a sequence with no detectable periodicity.
    """
    centred = np.asarray(matrix, dtype=float)
    centred = centred - centred.mean(axis=1, keepdims=True)
    length = centred.shape[1]
    if length < 3 or not np.any(centred):
        return None
    nfft = 1 << int(np.ceil(np.log2(2 * length)))
    spec = np.fft.rfft(centred, nfft, axis=1)
    ac = np.fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, :length].sum(axis=0)
    ac = ac / np.arange(length, 0, -1)  # unbiased: each lag averaged over its overlap
    lags = np.arange(1, length // 2 + 1)
    if len(lags) < 2:
        return None
    corr = ac[lags]
    peaks = [lag for lag in range(1, len(corr) - 1)
             if corr[lag] >= corr[lag - 1] and corr[lag] > corr[lag + 1] and corr[lag] > 0]
    if not peaks:
        return None
    top = max(corr[lag] for lag in peaks)
    for lag in peaks:  # first dominant peak wins
        if corr[lag] >= 0.8 * top:
            return float(lags[lag])
    return None


def _rising_edges(row):
    row = np.asarray(row, dtype=bool)
    return np.flatnonzero(row[1:] & ~row[:-1]) + 1


def _fit_frequency(matrix, dt, period):
    """Refine the period by least squares on rising-edge times (shared slope, per-leg intercept)."""
    ts, cs, legs = [], [], []
    for leg_id, row in enumerate(matrix):
        edges = _rising_edges(row)
        if len(edges) == 0:
            continue
        steps = np.round(np.diff(edges) / period)
        if np.any(steps < 1):
            steps = np.maximum(steps, 1)
        cyc = np.concatenate([[0.0], np.cumsum(steps)])
        ts.append(edges * dt)
        cs.append(cyc)
        legs.append(np.full(len(edges), leg_id))
    if not ts:
        return 1.0 / (period * dt), None
    times, cycles, leg = np.concatenate(ts), np.concatenate(cs), np.concatenate(legs)
    tc = times.copy()
    cc = cycles.copy()
    for leg_id in np.unique(leg):
        mask = leg == leg_id
        tc[mask] -= times[mask].mean()
        cc[mask] -= cycles[mask].mean()
    denom = float(cc @ cc)
    period_s = float(tc @ cc / denom) if denom > 0 else period * dt
    return 1.0 / period_s, (times, cycles, leg)


def _agreement(matrix, phase, freq, duty, shifts, dt, exact=True):
    """Mean agreement per leg for each candidate shift: (S, 4).

    ``exact=False`` skips boundary snapping; good enough for a coarse search.
    """
    length = matrix.shape[1]
    times = np.arange(length) * dt
    shifts = np.atleast_1d(shifts)
    frac = freq * times[None, None, :] + shifts[:, None, None] + np.asarray(phase)[None, :, None]
    frac = cycle_fraction(frac) if exact else np.mod(frac, 1.0)
    return ((frac < duty) == matrix[None]).mean(axis=2)


def _lp_polish(matrix, phase, dt, f0, delta0, duty, d0):
    """Exact fit of (frequency, shift, duty) with cycle numbers fixed from an initial guess.

    Each sample gives linear constraints 0 <= x < d (stance) or d <= x < 1
    (swing) with x = f t + shift + phase - cycle.  A common margin s on all
    four sides is maximised, which centres the solution away from the
    interval ends where floating-point rounding could flip a sample.  Only
    samples adjacent to a transition are constrained; the caller verifies.
    """
    length = matrix.shape[1]
    t_all = np.arange(length) * dt
    phase = np.asarray(phase, dtype=float)
    rows, rhs = [], []
    for leg in range(4):
        st_all = matrix[leg]
        change = np.zeros(length, dtype=bool)
        change[1:] |= st_all[1:] != st_all[:-1]
        change[:-1] |= st_all[1:] != st_all[:-1]
        change[[0, -1]] = True
        times, st = t_all[change], st_all[change]
        # cycle number of the nearest interval centre of the observed kind
        centre = np.where(st, d0 / 2, (1 + d0) / 2)
        cyc = np.round(f0 * times + delta0 + phase[leg] - centre)
        lo = np.where(st, 0.0, 1.0)   # coefficient of d in the lower bound
        hi = np.where(st, 1.0, 0.0)   # coefficient of d in the upper bound (else 1)
        one = np.ones(len(times))
        # lower: x >= lo*d + s  ->  -f t - shift + lo d + s <= phase - cyc
        rows.append(np.column_stack([-times, -one, lo, one]))
        rhs.append(phase[leg] - cyc)
        # upper: x <= (hi ? d : 1) - s  ->  f t + shift - hi d + s <= (1 - hi) + cyc - phase
        rows.append(np.column_stack([times, one, -hi, one]))
        rhs.append((1.0 - hi) + cyc - phase[leg])
    lhs = np.vstack(rows)
    bound = np.concatenate(rhs)
    dbounds = (duty, duty) if duty is not None else (1e-6, 1.0)
    res = linprog([0, 0, 0, -1], A_ub=lhs, b_ub=bound,
                  bounds=[(0.5 * f0, 1.5 * f0), (None, None), dbounds, (None, 1.0)], method="highs")
    if res.status != 0 or res.x[3] <= 1e-12:
        return None
    freq, delta, duty_fit, _ = res.x
    return float(freq), float(delta), float(duty_fit)


def contact_match(seq, template, duty=None, shifts=200):
    """Best phase-shift agreement between a contact sequence and a gait template.

    ``duty`` fixes the template duty factor; ``None`` fits it to the data.
    The fitted frequency comes from the dominant contact period.
    """
    matrix = np.asarray(getattr(seq, "matrix", seq), dtype=bool)
    dt = float(getattr(seq, "dt", 0.02))
    if isinstance(template, str):
        template = reference_gait(template)
    phase = np.asarray(template.phase, dtype=float)
    length = matrix.shape[1]
    d_est = float(matrix.mean()) if duty is None else float(duty)

    period = dominant_period(matrix)
    if period is None:
        # flat: one template cycle spans the sequence, no shift search
        freq = 1.0 / (length * dt)
        agree = _agreement(matrix, phase, freq, d_est, [0.0], dt)[0]
        return MatchReport(100.0 * float(agree.mean()), 0.0, agree, freq, d_est)

    freq, edges = _fit_frequency(matrix, dt, period)
    grid = np.arange(shifts) / shifts
    coarse = _agreement(matrix, phase, freq, d_est, grid, dt, exact=False)
    best_idx = int(np.argmax(coarse.mean(axis=1)))
    agree = _agreement(matrix, phase, freq, d_est, grid[best_idx], dt)[0]
    best = (float(agree.mean()), float(grid[best_idx]), agree, freq, d_est)

    if 0.9 <= best[0] < 1.0:  # exactness is only plausible near a match
        exact = _lp_polish(matrix, phase, dt, freq, best[1], duty, d_est)
        if exact is None and edges is not None:
            times, cycles, leg = edges
            resid = cycles - freq * (times - 0.5 * dt) - phase[leg]
            guess = np.angle(np.mean(np.exp(2j * np.pi * resid))) / (2 * np.pi)
            exact = _lp_polish(matrix, phase, dt, freq, guess, duty, d_est)
        if exact is not None:
            f2, delta2, d2 = exact
            a2 = _agreement(matrix, phase, f2, d2, [delta2], dt)[0]
            if a2.mean() > best[0]:
                best = (float(a2.mean()), float(np.mod(delta2, 1.0)), a2, f2, d2)
    percent, shift, per_leg, freq, duty_fit = best
    return MatchReport(100.0 * percent, shift, per_leg, freq, duty_fit)


def classify_gait(seq, duty=None):
    """(label, margin, reports): argmax contact match over the four templates.

    Ties resolve in the fixed order Trot, Pace, Bound, Hop.
    """
    reports = {gait: contact_match(seq, reference_gait(gait), duty) for gait in GAIT_LABELS}
    ranked = sorted(GAIT_LABELS, key=lambda gait: (-reports[gait].percent, GAIT_LABELS.index(gait)))
    margin = reports[ranked[0]].percent - reports[ranked[1]].percent
    return ranked[0], float(margin), reports


def template_sequence(template, frequency, duty, duration, dt=0.02, shift=0.0):
    if isinstance(template, str):
        template = reference_gait(template)
    return ideal_contacts(template.phase, frequency, duty, shift, duration, dt)


# ---------------------------------------------------------------------------
# trajectory similarity


def _frames(traj, names=None):
    """(F, K, 2) coordinate array plus joint names from a trajectory or raw array."""
    if hasattr(traj, "skeleton"):
        names = names or traj.skeleton
        idx = [traj.index(name) for name in names]
        return np.asarray(traj.xy, dtype=float)[:, idx], tuple(names)
    arr = np.asarray(traj, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None, None]
    elif arr.ndim == 2:
        arr = arr[:, :, None]
    return arr, names


def _shared(seq_a, seq_b):
    if hasattr(seq_a, "skeleton") and hasattr(seq_b, "skeleton"):
        names = [name for name in seq_a.skeleton if name in set(seq_b.skeleton)]
        if not names:
            raise NoCommonKeypoints("trajectories share no keypoint names")
        return _frames(seq_a, names)[0], _frames(seq_b, names)[0]
    return _frames(seq_a)[0], _frames(seq_b)[0]


def frame_costs(seq_a, seq_b):
    """(n, m) mean Euclidean distance over keypoints; NaN keypoints are skipped."""
    diff = seq_a[:, None] - seq_b[None]
    dist = np.sqrt(np.sum(diff ** 2, axis=-1))
    with np.errstate(invalid="ignore"):
        cost = np.nanmean(dist, axis=-1) if np.isnan(dist).any() else dist.mean(axis=-1)
    return np.nan_to_num(cost, nan=0.0)


def dtw_path_cost(cost):
    """Minimal accumulated cost and its path length (ties → shorter path) over
    monotone paths with steps (1,1), (1,0), (0,1)."""
    n_rows, n_cols = cost.shape
    acc = np.full((n_rows + 1, n_cols + 1), np.inf)
    Lm = np.zeros((n_rows + 1, n_cols + 1))
    acc[0, 0] = 0.0
    # sweep anti-diagonals so each update is vectorised
    for diag in range(2, n_rows + n_cols + 1):
        ri = np.arange(max(1, diag - n_cols), min(n_rows, diag - 1) + 1)
        ci = diag - ri
        cand_c = np.stack([acc[ri - 1, ci - 1], acc[ri - 1, ci], acc[ri, ci - 1]])
        cand_l = np.stack([Lm[ri - 1, ci - 1], Lm[ri - 1, ci], Lm[ri, ci - 1]])
        order = np.lexsort((cand_l, cand_c), axis=0)[0]
        cols = np.arange(len(ri))
        acc[ri, ci] = cand_c[order, cols] + cost[ri - 1, ci - 1]
        Lm[ri, ci] = cand_l[order, cols] + 1
    return float(acc[n_rows, n_cols]), int(Lm[n_rows, n_cols])


def dtw_distance(seq_a, seq_b, return_cost=False):
    """DTW between two keypoint trajectories, accumulated cost divided by path length."""
    frames_a, frames_b = _shared(seq_a, seq_b)
    if len(frames_a) == 0 or len(frames_b) == 0:
        raise InvalidInput("DTW needs non-empty trajectories")
    total, length = dtw_path_cost(frame_costs(frames_a, frames_b))
    value = total / length
    return (value, total, length) if return_cost else value


@dataclass
class ICPResult:
    rotation: np.ndarray     # 2x2
    translation: np.ndarray  # (2,)
    aligned: np.ndarray      # src with the transform applied, original shape
    residual: float          # RMS nearest-neighbour distance after alignment
    iterations: int

    @property
    def angle(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))


def _kabsch(source, target):
    """Rotation R and translation t minimising ||R source + t - target|| for paired rows."""
    pc, qc = source.mean(axis=0), target.mean(axis=0)
    cov = (source - pc).T @ (target - qc)
    left, _, Vt = np.linalg.svd(cov)
    fix = np.diag([1.0, np.sign(np.linalg.det(Vt.T @ left.T)) or 1.0])
    rot = Vt.T @ fix @ left.T
    return rot, qc - rot @ pc


def _pool(points):
    arr = np.asarray(points, dtype=float)
    flat = arr.reshape(-1, 2)
    return arr, flat[np.all(np.isfinite(flat), axis=1)]


def icp_align(src, dst, max_iter=50, tol=1e-9):
    """Rigid 2-D ICP applying one global transform to every frame of ``src``.

    With equally shaped inputs the iteration starts from the index-paired
    least-squares fit; otherwise from centroid alignment.
    """
    src_arr, src_pts = _pool(src)
    dst_arr, dst_pts = _pool(dst)
    for pts in (src_pts, dst_pts):
        if len(pts) < 3 or np.linalg.matrix_rank(pts - pts.mean(axis=0), tol=1e-9) < 2:
            raise DegenerateGeometry("ICP needs >= 3 non-collinear points")
    if src_arr.shape == dst_arr.shape:
        flat_s, flat_d = src_arr.reshape(-1, 2), dst_arr.reshape(-1, 2)
        ok = np.all(np.isfinite(flat_s), axis=1) & np.all(np.isfinite(flat_d), axis=1)
        if ok.sum() >= 3:
            rot, shift = _kabsch(flat_s[ok], flat_d[ok])
        else:
            rot, shift = np.eye(2), dst_pts.mean(0) - src_pts.mean(0)
    else:
        rot, shift = np.eye(2), dst_pts.mean(axis=0) - src_pts.mean(axis=0)
    tree = cKDTree(dst_pts)
    prev = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        moved = src_pts @ rot.T + shift
        dist, idx = tree.query(moved)
        err = float(np.sqrt(np.mean(dist ** 2)))
        if abs(prev - err) < tol:
            break
        prev = err
        rot_new, shift_new = _kabsch(src_pts, dst_pts[idx])
        if np.sqrt(np.mean(np.sum((src_pts @ rot_new.T + shift_new - dst_pts[idx]) ** 2, axis=1))) > err:
            break
        rot, shift = rot_new, shift_new
    moved = src_pts @ rot.T + shift
    residual = float(np.sqrt(np.mean(tree.query(moved)[0] ** 2)))
    aligned = (src_arr.reshape(-1, 2) @ rot.T + shift).reshape(src_arr.shape)
    return ICPResult(rot, shift, aligned, residual, it)


def body_frame(traj, scale, names=None):
    """(F, K, 2) keypoints in metres relative to the base, y up."""
    xy, names = _frames(traj, names)
    base = xy[:, [names.index("base")]] if "base" in names else np.nanmean(xy, axis=1, keepdims=True)
    rel = (xy - base) * scale
    rel[..., 1] *= -1.0
    return rel, names


def trajectory_distance(demo, rollout, demo_scale, rollout_scale):
    """DTW between demo and rollout after unit normalisation and ICP alignment.

    Both trajectories are expressed base-relative in metres, the rollout is
    ICP-aligned onto the demo, and DTW runs in units of the rollout camera.
    """
    names = [name for name in demo.skeleton if name in set(rollout.skeleton)]
    if not names:
        raise NoCommonKeypoints("demo and rollout share no keypoint names")
    demo_rel, _ = body_frame(demo, demo_scale, names)
    roll_rel, _ = body_frame(rollout, rollout_scale, names)
    icp = icp_align(roll_rel, demo_rel)
    value = dtw_distance(icp.aligned / rollout_scale, demo_rel / rollout_scale)
    return value, icp


# ---------------------------------------------------------------------------
# smoothing and stability


def moving_average(signal, window):
    """Centered moving average with truncated windows at the edges."""
    values = np.asarray(signal, dtype=float)
    window = int(window)
    if window < 1:
        raise InvalidWindow(f"window must be >= 1, got {window}")
    if window == 1 or len(values) == 0:
        return values.copy()
    left, right = (window - 1) // 2, window // 2
    padded = np.concatenate([np.full(left, np.nan), values, np.full(right, np.nan)])
    win = np.lib.stride_tricks.sliding_window_view(padded, window)
    # average deviations from the centre value so constant input stays bit-exact
    dev = win - values[:, None]
    out = values + np.nanmean(dev, axis=1)
    return np.clip(out, np.nanmin(win, axis=1), np.nanmax(win, axis=1))


def sts_score(com_dist, omega_mag):
    """Stability-to-speed score 2 - [clip(com, 0, 1) + clip(|w|, 0, 1)]; elementwise."""
    com = np.asarray(com_dist, dtype=float)
    omega = np.asarray(omega_mag, dtype=float)
    if not (np.all(np.isfinite(com)) and np.all(np.isfinite(omega))):
        raise InvalidInput("StS inputs must be finite")
    if np.any(com < 0) or np.any(omega < 0):
        raise InvalidInput("StS inputs must be non-negative")
    out = 2.0 - (np.clip(com, 0.0, 1.0) + np.clip(omega, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def sts_series(trace, window=25):
    """Per-step StS of a rollout (inputs smoothed with a moving average)."""
    from .sim import support_distances

    com, _ = support_distances(trace)
    omega = np.linalg.norm(trace.observations.base_ang_vel, axis=-1)
    return sts_score(moving_average(com, window), moving_average(omega, window))


# ---------------------------------------------------------------------------
# VLM score vectors

CRITERIA = ("stability", "periodicity", "adherence")
_LIST_RE = re.compile(r"\[\s*(-?\d+(?:\s*,\s*-?\d+)*)\s*,?\s*\]")


@dataclass
class ScoreVector:
    criteria: list   # [(name, score)]
    aggregate: int

    @property
    def scores(self):
        return [score for _, score in self.criteria]

    def to_json(self):
        return {"criteria": [[name, score] for name, score in self.criteria], "aggregate": self.aggregate}

    @classmethod
    def from_json(cls, doc):
        return cls([(name, int(score)) for name, score in doc["criteria"]], int(doc["aggregate"]))

    @classmethod
    def zero(cls, names=CRITERIA):
        return cls([(name, 0) for name in names], 0)


def parse_score_vector(text, criteria=CRITERIA):
    """First bracketed integer list in ``text`` as a :class:`ScoreVector`."""
    found = _LIST_RE.search(text or "")
    if not found:
        raise ScoreParseError(f"no bracketed integer list in response: {str(text)[:80]!r}")
    scores = [int(score) for score in found.group(1).split(",")]
    if criteria is not None and len(scores) != len(criteria):
        raise ScoreParseError(f"expected {len(criteria)} scores, got {len(scores)}")
    bad = [score for score in scores if not 0 <= score <= 10]
    if bad:
        raise ScoreOutOfRange(f"scores must lie in [0, 10], got {bad}")
    names = list(criteria) if criteria is not None else [f"c{idx}" for idx in range(len(scores))]
    return ScoreVector(list(zip(names, scores)), sum(scores))


def gait_report(trace, demo=None, demo_scale=None, target=None, window=25):
    """Metric bundle {dtw, match_percent, best_shift, sts, label} for a rollout."""
    label, margin, reports = classify_gait(trace.contacts)
    target = target or label
    match = reports[target] if target in reports else contact_match(trace.contacts, target)
    sts = sts_series(trace, window)
    out = {"label": label, "margin": margin, "target": target, "match_percent": match.percent,
           "best_shift": match.best_shift, "sts": float(np.mean(sts)), "dtw": None,
           "reset_count": trace.reset_count}
    if demo is not None:
        out["dtw"], icp = trajectory_distance(demo, trace.keypoints, demo_scale, _rollout_scale(trace))
        out["icp_residual"] = icp.residual
    return out


def _rollout_scale(trace):
    # meters per normalised unit of the simulator camera, recovered from the base keypoint height
    kp = trace.keypoints
    base_y = kp.xy[:, kp.index("base"), 1]
    height = trace.observations.base_height
    ok = np.abs(0.9 - base_y) > 1e-9
    return float(np.median(height[ok] / (0.9 - base_y[ok]))) if ok.any() else 2.0


__all__ = ["MatchReport", "ScoreVector", "ICPResult", "GaitTemplate", "contact_match", "classify_gait",
           "dtw_distance", "icp_align", "moving_average", "sts_score", "parse_score_vector"]
