"""
Coincidence analysis of time-tag streams: cross-correlation histograms,
normalized g2, coincidence-to-accidental ratio and Gaussian fits.

Lag convention: tau = t_b - t_a. Bin k of a histogram covers
[-max_lag + k*bin_width, -max_lag + (k+1)*bin_width). Lags reported per
bin are the left edge plus bin_width // 2 (the exact center for even
widths). All times are integer picoseconds.
"""

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import CapacityError, FitFailureError, NormalizationError, OrderingError
from .streams import PS_PER_S, TagStream

# expanded (a, b) pairs held in memory at once per segment
PAIRS_PER_SEGMENT = 1 << 22
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
MAX_FIT_EVALS = 5000


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    bin_width_ps: int
    max_lag_ps: int
    counts: np.ndarray
    n_a: int
    n_b: int
    duration_ps: int

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def left_edges(self) -> np.ndarray:
        return -self.max_lag_ps + self.bin_width_ps * np.arange(self.n_bins, dtype=np.int64)

    @property
    def lags_ps(self) -> np.ndarray:
        return self.left_edges + self.bin_width_ps // 2

    @property
    def centers(self) -> np.ndarray:
        return self.left_edges + self.bin_width_ps / 2.0

    def __eq__(self, other):
        if not isinstance(other, CorrelationHistogram):
            return NotImplemented
        return (
            (self.bin_width_ps, self.max_lag_ps, self.n_a, self.n_b, self.duration_ps)
            == (other.bin_width_ps, other.max_lag_ps, other.n_a, other.n_b, other.duration_ps)
            and np.array_equal(self.counts, other.counts)
        )

    def expected_accidentals(self) -> float:
        """Accidental counts per bin, r_a * r_b * T * bin_width, for independent streams."""
        seconds = self.duration_ps / PS_PER_S
        return self.n_a * self.n_b / seconds * self.bin_width_ps / PS_PER_S

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("lag_ps,counts\n")
        for lag, c in zip(self.lags_ps.tolist(), self.counts.tolist()):
            buf.write(f"{lag},{c}\n")
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class G2Curve:
    lags_ps: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    baseline: float
    bin_width_ps: int

    @property
    def centers(self) -> np.ndarray:
        return self.lags_ps + (self.bin_width_ps % 2) / 2.0

    @property
    def counts(self) -> np.ndarray:
        return self.g2 * self.baseline

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("lag_ps,g2,stderr\n")
        for lag, g, e in zip(self.lags_ps.tolist(), self.g2.tolist(), self.stderr.tolist()):
            buf.write(f"{lag},{g!r},{e!r}\n")
        return buf.getvalue()


@dataclass(frozen=True)
class DipFit:
    g2_zero: float
    sigma_ps: float
    visibility: float
    center_ps: float
    residual: float
    visibility_err: float = math.nan
    sigma_err: float = math.nan
    center_err: float = math.nan

    def to_dict(self) -> dict:
        return {
            "g2_zero": self.g2_zero,
            "sigma_ps": self.sigma_ps,
            "visibility": self.visibility,
            "center_ps": self.center_ps,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class PeakFit:
    amplitude: float
    sigma_ps: float
    center_ps: float
    residual: float
    amplitude_err: float = math.nan
    sigma_err: float = math.nan
    center_err: float = math.nan

    @property
    def fwhm_ps(self) -> float:
        return FWHM_PER_SIGMA * self.sigma_ps

    @property
    def g2_peak(self) -> float:
        return 1.0 + self.amplitude

    def to_dict(self) -> dict:
        return {
            "g2_peak": self.g2_peak,
            "amplitude": self.amplitude,
            "sigma_ps": self.sigma_ps,
            "fwhm_ps": self.fwhm_ps,
            "center_ps": self.center_ps,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class CarResult:
    """CAR value; ``zero_background`` flags the infinite sentinel."""

    value: float
    peak_lag_ps: int
    peak_mean: float
    background_mean: float
    zero_background: bool

    def __float__(self):
        return self.value


def _times(stream):
    if isinstance(stream, TagStream):
        return stream.timestamps
    return np.asarray(stream, dtype=np.int64)


def _check_sorted(t, name):
    if t.size > 1 and np.any(t[1:] < t[:-1]):
        raise OrderingError(f"stream {name} is not sorted by timestamp")


def _segments(n_pairs, limit):
    """Split indices of a so that each segment expands to at most ~limit pairs."""
    cum = np.cumsum(n_pairs)
    bounds = [0]
    while bounds[-1] < n_pairs.size:
        start = bounds[-1]
        base = cum[start - 1] if start else 0
        stop = int(np.searchsorted(cum, base + limit, side="right"))
        bounds.append(max(stop, start + 1))
    return list(zip(bounds[:-1], bounds[1:]))


def cross_correlate(a, b, bin_width_ps: int, max_lag_ps: int, threads: int = 1) -> CorrelationHistogram:
    """Histogram of t_b - t_a over all ordered pairs with lag in [-max_lag, max_lag).

    For each event of ``a`` the window of ``b`` is located by binary search
    on the sorted stream, and only in-window pairs are expanded, so the cost
    is linear in the number of in-range pairs plus N log M.

    Parameters
    ----------
    a, b : TagStream or array of int
        Sorted timestamps in picoseconds.
    bin_width_ps : int
        Must divide ``2 * max_lag_ps``.
    threads : int
        Segments of ``a`` are histogrammed concurrently and summed; the
        result is identical for any value.
    """
    bin_width_ps, max_lag_ps = int(bin_width_ps), int(max_lag_ps)
    if bin_width_ps < 1 or max_lag_ps < 1 or (2 * max_lag_ps) % bin_width_ps:
        raise ValueError(f"bin_width_ps={bin_width_ps} must be >= 1 and divide 2*max_lag_ps={2 * max_lag_ps}")
    ta, tb = _times(a), _times(b)
    _check_sorted(ta, "a")
    _check_sorted(tb, "b")
    n_bins = 2 * max_lag_ps // bin_width_ps
    duration = max(
        getattr(a, "duration_ps", 0), getattr(b, "duration_ps", 0),
        int(max(ta[-1] if ta.size else 0, tb[-1] if tb.size else 0)),
    )
    counts = np.zeros(n_bins, dtype=np.int64)
    if ta.size and tb.size:
        lo = np.searchsorted(tb, ta - max_lag_ps, side="left")
        hi = np.searchsorted(tb, ta + max_lag_ps, side="left")
        n_pairs = hi - lo
        if float(n_pairs.sum(dtype=float)) >= 2.0**63:
            raise CapacityError("pair count exceeds the 64-bit bin capacity")

        def histogram(seg):
            i0, i1 = seg
            n = n_pairs[i0:i1]
            total = int(n.sum())
            if total == 0:
                return np.zeros(n_bins, dtype=np.int64)
            first = np.cumsum(n) - n
            j = np.repeat(lo[i0:i1] - first, n) + np.arange(total)
            lag = tb[j] - np.repeat(ta[i0:i1], n)
            return np.bincount((lag + max_lag_ps) // bin_width_ps, minlength=n_bins).astype(np.int64)

        segs = _segments(n_pairs, PAIRS_PER_SEGMENT)
        if threads > 1 and len(segs) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(histogram, segs))
        else:
            parts = map(histogram, segs)
        for part in parts:
            counts += part
    counts.setflags(write=False)
    return CorrelationHistogram(bin_width_ps, max_lag_ps, counts, int(ta.size), int(tb.size), int(duration))


def _regions(hist, center, peak_halfwidth_ps, bg_exclusion_ps):
    dist = np.abs(hist.centers - center)
    return dist <= peak_halfwidth_ps, dist > bg_exclusion_ps


def car(hist: CorrelationHistogram, peak_halfwidth_ps: float, bg_exclusion_ps: float,
        center_ps: float = None) -> CarResult:
    """Coincidence-to-accidental ratio: mean counts per bin in the peak over
    mean counts per bin in the far background.

    The peak sits at the maximum-count bin unless ``center_ps`` is given.
    A zero background returns ``value = inf`` with ``zero_background`` set.
    """
    if not 0 <= peak_halfwidth_ps < bg_exclusion_ps < hist.max_lag_ps:
        raise ValueError("need 0 <= peak_halfwidth < bg_exclusion < max_lag")
    if center_ps is None:
        center_ps = float(hist.centers[int(np.argmax(hist.counts))])
    peak, bg = _regions(hist, center_ps, peak_halfwidth_ps, bg_exclusion_ps)
    if not peak.any() or not bg.any():
        raise ValueError("peak or background region contains no bins")
    peak_mean = float(hist.counts[peak].mean())
    bg_mean = float(hist.counts[bg].mean())
    if bg_mean == 0:
        return CarResult(math.inf, int(round(center_ps)), peak_mean, 0.0, True)
    return CarResult(peak_mean / bg_mean, int(round(center_ps)), peak_mean, bg_mean, False)


def true_coincidences(hist: CorrelationHistogram, peak_halfwidth_ps: float, bg_exclusion_ps: float,
                      center_ps: float = None) -> float:
    """Counts in the peak window minus the accidental level expected there."""
    res = car(hist, peak_halfwidth_ps, bg_exclusion_ps, center_ps)
    peak, _ = _regions(hist, res.peak_lag_ps if center_ps is None else center_ps,
                       peak_halfwidth_ps, bg_exclusion_ps)
    return float(hist.counts[peak].sum()) - res.background_mean * int(peak.sum())


def normalize_g2(hist: CorrelationHistogram, bg_exclusion_ps: float) -> G2Curve:
    """g2(tau) = counts / baseline, baseline = mean counts over |tau| > bg_exclusion."""
    bg = np.abs(hist.centers) > bg_exclusion_ps
    if not bg.any():
        raise NormalizationError(f"no bins beyond |tau| > {bg_exclusion_ps} ps")
    baseline = float(hist.counts[bg].mean())
    if baseline == 0:
        raise NormalizationError("background counts are zero; g2 is undefined")
    counts = hist.counts.astype(float)
    return G2Curve(hist.lags_ps.copy(), counts / baseline, np.sqrt(counts) / baseline, baseline,
                   hist.bin_width_ps)


def _fit_gaussian(curve, sign):
    x = curve.centers
    y = curve.g2
    sigma_y = np.sqrt(np.maximum(curve.counts, 1.0)) / curve.baseline
    dev = sign * (y - 1.0)
    # locate the extremum on a moving average so a single noisy bin cannot seed the fit
    half = max(1, x.size // 100)
    smooth = np.convolve(dev, np.ones(2 * half + 1) / (2 * half + 1), mode="same")
    k = int(np.argmax(smooth[half:-half])) + half if x.size > 2 * half else int(np.argmax(smooth))
    center0 = float(x[k])
    amp0 = float(max(smooth[k], dev[k - 1:k + 2].mean()))
    width = float(x[-1] - x[0])
    near = np.abs(x - center0) <= width / 4
    if amp0 > 0:
        area = float(np.clip(dev[near], 0, None).sum()) * curve.bin_width_ps
        s0 = area / (amp0 * math.sqrt(2 * math.pi))
    else:
        s0 = width / 8
    s0 = float(np.clip(s0, curve.bin_width_ps, width / 4))
    if np.count_nonzero(np.abs(x - center0) <= 5 * s0) < 10:
        raise FitFailureError("fewer than 10 bins inside +-5 sigma of the initial guess",
                              (amp0, s0, center0))

    # parameters are scaled to O(1) so the relative step criterion is uniform;
    # the width is fitted as log(sigma / s0) to keep it positive on shallow dips
    def model(p):
        amp, s, c = p[0], s0 * math.exp(min(p[1], 50.0)), center0 + p[2] * s0
        return 1.0 + sign * amp * np.exp(-((x - c) ** 2) / (2 * s * s))

    def resid(p):
        return (y - model(p)) / sigma_y

    p0 = np.array([amp0, 0.0, 0.0])
    res = least_squares(resid, p0, method="lm", xtol=1e-8, ftol=1e-14, gtol=1e-14, max_nfev=MAX_FIT_EVALS)
    chi2 = float(np.sum(res.fun**2))
    amp, log_s, c_scaled = res.x
    sigma = s0 * math.exp(min(log_s, 50.0))
    params = (float(amp), float(sigma), float(center0 + c_scaled * s0))
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitFailureError(f"Gaussian fit did not converge: {res.message}", params, chi2)
    if not x[0] <= params[2] <= x[-1]:
        raise FitFailureError("fitted center lies outside the lag window; no resolvable feature", params, chi2)
    errs = (math.nan, math.nan, math.nan)
    jtj = res.jac.T @ res.jac
    if np.linalg.cond(jtj) < 1e14:
        d = np.sqrt(np.diag(np.linalg.inv(jtj)))
        errs = (float(d[0]), float(d[1] * sigma), float(d[2] * s0))
    return params, chi2, errs


def fit_gaussian_dip(curve: G2Curve) -> DipFit:
    """Weighted least-squares fit of g2 = 1 - V exp(-(tau - tau0)^2 / 2 sigma^2).

    Weights are 1 / max(counts, 1) per bin (Poisson). Reported errors come
    from the inverse normal matrix without rescaling by the fit quality.
    """
    (vis, sigma, center), chi2, (e_v, e_s, e_c) = _fit_gaussian(curve, -1.0)
    return DipFit(1.0 - vis, sigma, vis, center, chi2, e_v, e_s, e_c)


def fit_gaussian_peak(curve: G2Curve) -> PeakFit:
    """As :func:`fit_gaussian_dip` for g2 = 1 + A exp(-(tau - tau0)^2 / 2 sigma^2)."""
    (amp, sigma, center), chi2, (e_a, e_s, e_c) = _fit_gaussian(curve, 1.0)
    return PeakFit(amp, sigma, center, chi2, e_a, e_s, e_c)


def singles_rates(stream: TagStream, channels=None) -> dict:
    """Counts per second for each channel present (or each of ``channels``)."""
    seconds = stream.duration_ps / PS_PER_S
    if seconds <= 0:
        raise ValueError("stream duration must be > 0")
    present = np.unique(stream.channels).tolist()
    wanted = present if channels is None else list(channels)
    return {int(ch): float(np.count_nonzero(stream.channels == ch)) / seconds for ch in wanted}
