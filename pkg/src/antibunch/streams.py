"""
Monte-Carlo time-tag streams for pair, coherent, anti-bunched and
path-entangled sources, seen through a two-detector model.

All times are integer picoseconds. Generation is split into fixed-length
chunks, each with its own seed derived from ``(seed, stage, chunk)``, so
the output does not depend on how many threads process the chunks.

Mode-based sources (anti-bunched, path-entangled) tile time with
contiguous boxes of length T_c. Each box draws its photon content from the
exact single-mode (or two-mode) distribution and places photons uniformly
inside the box. Only boxes that can hold a photon are visited: candidates
come from a Bernoulli process at the largest non-vacuum probability and are
then thinned to the phase-dependent one.
"""

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fock
from .errors import CapacityError, OrderingError, ParameterError

PS_PER_S = 10**12
SOURCE_KINDS = ("pairs", "coherent", "antibunched", "path_entangled")
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

DEFAULT_MAX_EVENTS = 50_000_000
CHUNK_SECONDS = 5.0
# resolution of the per-mode phase lookup table
PHASE_GRID = 1024
MODE_DIM = 8

_STAGE_PHASE_BOUNDARY = 0
_STAGE_SOURCE = 1
_STAGE_DETECTOR = 2
_STAGE_PHASE = 3


@dataclass(frozen=True)
class DetectorModel:
    """Per-channel efficiency, Gaussian timing jitter, dark counts, dead time.

    Times are in seconds, ``dark_rate`` in counts per second per channel.
    A scalar efficiency applies to both channels.
    """

    efficiency: tuple = (1.0, 1.0)
    jitter_sigma: float = 0.0
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self):
        eff = self.efficiency
        if np.isscalar(eff):
            eff = (eff, eff)
        eff = tuple(float(e) for e in eff)
        if len(eff) != 2 or not all(0.0 <= e <= 1.0 for e in eff):
            raise ParameterError(f"efficiency must be two values in [0, 1], got {self.efficiency}")
        object.__setattr__(self, "efficiency", eff)
        for name in ("jitter_sigma", "dark_rate", "dead_time"):
            if not getattr(self, name) >= 0:
                raise ParameterError(f"{name} must be >= 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class SourceConfig:
    """Parameters of one simulated acquisition.

    ``pair_rate`` sets the pairs per mode, |eta|^2 = pair_rate * T_c.
    ``coherent_rate`` is the Poisson rate of the coherent source, and for
    unmatched mode-based sources sets |alpha|^2 = coherent_rate * T_c (per
    arm for path_entangled). With ``matched`` the coherent amplitude is
    chosen to cancel the two-photon term instead.
    """

    source_kind: str
    pair_rate: float = 0.0
    coherent_rate: float = 0.0
    coherence_time: float = 5e-9
    phase_diffusion: float = 0.0
    phase_offset: float = 0.0
    duration: float = 1.0
    seed: int = 0
    detector: DetectorModel = field(default_factory=DetectorModel)
    matched: bool = True

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ParameterError(f"source_kind must be one of {SOURCE_KINDS}, got {self.source_kind!r}")
        if self.pair_rate < 0 or self.coherent_rate < 0:
            raise ParameterError("rates must be >= 0")
        if not self.coherence_time > 0:
            raise ParameterError(f"coherence_time must be > 0, got {self.coherence_time}")
        if not self.duration > 0:
            raise ParameterError(f"duration must be > 0, got {self.duration}")
        if self.phase_diffusion < 0:
            raise ParameterError(f"phase_diffusion must be >= 0, got {self.phase_diffusion}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")
        if isinstance(self.detector, dict):
            object.__setattr__(self, "detector", DetectorModel(**self.detector))

    def replace(self, **changes) -> "SourceConfig":
        return dataclasses.replace(self, **changes)

    @property
    def duration_ps(self) -> int:
        return int(round(self.duration * PS_PER_S))

    @property
    def mode_ps(self) -> int:
        return max(1, int(round(self.coherence_time * PS_PER_S)))

    @property
    def eta_magnitude(self) -> float:
        return math.sqrt(self.pair_rate * self.coherence_time)


@dataclass(frozen=True, eq=False)
class TagStream:
    """Time-ordered detection records and the acquisition length."""

    timestamps: np.ndarray
    channels: np.ndarray
    duration_ps: int

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=np.int64)
        ch = np.array(self.channels, dtype=np.uint32)
        if t.shape != ch.shape or t.ndim != 1:
            raise ValueError("timestamps and channels must be 1-d arrays of equal length")
        if t.size and (np.any(np.diff(t) < 0)):
            raise OrderingError("timestamps must be non-decreasing")
        if t.size and (t[0] < 0 or t[-1] > self.duration_ps):
            raise ValueError("timestamps must lie in [0, duration_ps]")
        t.setflags(write=False)
        ch.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "duration_ps", int(self.duration_ps))

    @classmethod
    def single_channel(cls, timestamps, channel: int, duration_ps: int) -> "TagStream":
        t = np.asarray(timestamps, dtype=np.int64)
        return cls(t, np.full(t.size, channel, dtype=np.uint32), duration_ps)

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.duration_ps == other.duration_ps
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.channels, other.channels)
        )

    @property
    def duration(self) -> float:
        return self.duration_ps / PS_PER_S

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]


@dataclass(frozen=True)
class PhaseTrajectory:
    times: np.ndarray
    phases: np.ndarray


def _rng(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def phase_trajectory(phase_diffusion: float, duration: float, dt: float, seed: int) -> PhaseTrajectory:
    """Wiener phase sampled every ``dt`` seconds, starting from 0."""
    if not dt > 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    n = int(math.floor(duration / dt)) + 1
    times = np.arange(n) * dt
    steps = _rng(seed, _STAGE_PHASE).standard_normal(n - 1) * math.sqrt(phase_diffusion * dt)
    phases = np.concatenate([[0.0], np.cumsum(steps)])
    return PhaseTrajectory(times, phases)


def _quantize(x):
    # round half up to integer picoseconds
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(np.int64)


def _chunks(config):
    """(start_ps, stop_ps) chunk boundaries; mode sources align to mode edges."""
    total = config.duration_ps
    if config.source_kind in ("antibunched", "path_entangled"):
        mode = config.mode_ps
        per_chunk = max(1, int(CHUNK_SECONDS * PS_PER_S) // mode) * mode
        total = (total // mode) * mode
    else:
        per_chunk = int(CHUNK_SECONDS * PS_PER_S)
    edges = list(range(0, total, per_chunk)) + [total]
    return list(zip(edges[:-1], edges[1:]))


def _bernoulli_indices(rng, n, p):
    """Sorted indices in [0, n) each kept independently with probability p."""
    if n <= 0 or p <= 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(n, dtype=np.int64)
    parts = []
    pos = -1
    while pos < n:
        need = n - pos
        k = int(need * p + 6 * math.sqrt(need * p) + 16)
        idx = pos + np.cumsum(rng.geometric(p, size=k).astype(np.int64))
        parts.append(idx)
        pos = int(idx[-1])
    out = np.concatenate(parts)
    return out[out < n]


def _apply_dead_time(t, dead_ps):
    """Drop events closer than dead_ps to the previous kept event (t sorted)."""
    if dead_ps <= 0 or t.size < 2:
        return t
    close = np.flatnonzero(np.diff(t) < dead_ps) + 1
    if close.size == 0:
        return t
    keep = np.ones(t.size, dtype=bool)
    last_kept = None
    prev = -2
    for j in close:
        # j-1 outside the close set is always kept
        if j - 1 != prev:
            last_kept = t[j - 1]
        if t[j] - last_kept >= dead_ps:
            last_kept = t[j]
        else:
            keep[j] = False
        prev = j
    return t[keep]


def _detect(rng, times, channels, detector, start, stop):
    """Efficiency thinning, jitter and dark counts for one chunk.

    ``times`` are ideal arrival times in picoseconds (already integer).
    Returns one unsorted array of detection times per channel.
    """
    eff = np.asarray(detector.efficiency)
    kept = rng.random(times.size) < eff[channels]
    times, channels = times[kept], channels[kept]
    if detector.jitter_sigma > 0:
        times = times + _quantize(rng.normal(0.0, detector.jitter_sigma * PS_PER_S, times.size))
    out = []
    for ch in (0, 1):
        t = times[channels == ch]
        if detector.dark_rate > 0:
            n_dark = rng.poisson(detector.dark_rate * (stop - start) / PS_PER_S)
            t = np.concatenate([t, rng.integers(start, stop, n_dark, dtype=np.int64)])
        out.append(t)
    return out


def _finish(parts, config):
    """Merge chunk outputs into two sorted, dead-time-filtered streams."""
    dur = config.duration_ps
    dead = int(round(config.detector.dead_time * PS_PER_S))
    streams = []
    for ch in (0, 1):
        t = np.concatenate([p[ch] for p in parts]) if parts else np.empty(0, np.int64)
        t = t[(t >= 0) & (t <= dur)]
        t.sort(kind="stable")
        t = _apply_dead_time(t, dead)
        streams.append(TagStream.single_channel(t, ch, dur))
    return streams[0], streams[1]


def _run_chunks(work, config, threads):
    chunks = _chunks(config)
    jobs = [(i, start, stop) for i, (start, stop) in enumerate(chunks)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda j: work(*j), jobs))
    else:
        parts = [work(*j) for j in jobs]
    return _finish(parts, config)


def _check_capacity(photon_rate, config, max_events):
    expected = (photon_rate + 2 * config.detector.dark_rate) * config.duration
    if expected > max_events:
        raise CapacityError(
            f"expected {expected:.3g} events exceeds the cap of {max_events:.3g}; shorten duration or raise max_events"
        )


def _require_kind(config, kind):
    if config.source_kind != kind:
        raise ParameterError(f"expected source_kind={kind!r}, got {config.source_kind!r}")


def simulate_pairs(config: SourceConfig, threads: int = 1, max_events: int = DEFAULT_MAX_EVENTS):
    """Photon pairs with a Gaussian relative delay of FWHM T_c.

    Each photon of a pair picks a detector independently (50:50 splitter),
    so half of the pairs end on the same detector.
    """
    _require_kind(config, "pairs")
    _check_capacity(2 * config.pair_rate, config, max_events)
    sigma_ps = config.coherence_time * PS_PER_S / FWHM_PER_SIGMA

    def work(i, start, stop):
        rng = _rng(config.seed, _STAGE_SOURCE, i)
        n = rng.poisson(config.pair_rate * (stop - start) / PS_PER_S)
        t0 = start + rng.random(n) * (stop - start)
        t1 = t0 + rng.normal(0.0, sigma_ps, n)
        times = _quantize(np.concatenate([t0, t1]))
        channels = rng.integers(0, 2, 2 * n)
        return _detect(_rng(config.seed, _STAGE_DETECTOR, i), times, channels, config.detector, start, stop)

    return _run_chunks(work, config, threads)


def simulate_coherent(config: SourceConfig, threads: int = 1, max_events: int = DEFAULT_MAX_EVENTS):
    """Homogeneous Poisson photons at ``coherent_rate``, split 50:50."""
    _require_kind(config, "coherent")
    _check_capacity(config.coherent_rate, config, max_events)

    def work(i, start, stop):
        rng = _rng(config.seed, _STAGE_SOURCE, i)
        n = rng.poisson(config.coherent_rate * (stop - start) / PS_PER_S)
        times = _quantize(start + rng.random(n) * (stop - start))
        channels = rng.integers(0, 2, n)
        return _detect(_rng(config.seed, _STAGE_DETECTOR, i), times, channels, config.detector, start, stop)

    return _run_chunks(work, config, threads)


def source_amplitudes(config: SourceConfig):
    """Coherent amplitude alpha (real, >= 0) and |eta| per mode."""
    eta = config.eta_magnitude
    if config.source_kind == "antibunched":
        if eta > 0.25:
            raise ParameterError(f"|eta|={eta:.3g} per mode is outside the supported range (<= 0.25)")
        alpha = abs(fock.match_alpha(eta)) if config.matched else math.sqrt(config.coherent_rate * config.coherence_time)
    else:
        alpha = math.sqrt(eta) if config.matched else math.sqrt(config.coherent_rate * config.coherence_time)
    if alpha > fock.PERTURBATIVE_LIMIT or eta > fock.PERTURBATIVE_LIMIT:
        raise ParameterError(f"alpha={alpha:.3g}, |eta|={eta:.3g} per mode exceed {fock.PERTURBATIVE_LIMIT}")
    return alpha, eta


def mode_photon_distribution(config: SourceConfig, phase: float = 0.0) -> np.ndarray:
    """Photon-number probabilities of one anti-bunched mode at drift phase ``phase``."""
    alpha, eta = source_amplitudes(config)
    eta_k = eta * np.exp(1j * (phase + config.phase_offset))
    p = fock.squeezed_coherent_state(alpha, eta_k, MODE_DIM).probabilities
    return p / p.sum()


# non-vacuum outcomes of a path-entangled mode: photons in (a, b)
PATH_OUTCOMES = ((1, 0), (0, 1), (1, 1), (2, 0), (0, 2))


def mode_pair_distribution(config: SourceConfig, phase: float = 0.0) -> np.ndarray:
    """Probabilities of (vacuum, *PATH_OUTCOMES) for one path-entangled mode.

    The pair amplitude is eta = -|eta| exp(i(phase + phase_offset)), so a
    zero offset with matched amplitudes cancels the |1,1> term.
    """
    alpha, eta = source_amplitudes(config)
    eta_k = -eta * np.exp(1j * (phase + config.phase_offset))
    p = fock.path_entangled_state(alpha, alpha, eta_k).probabilities
    return np.array([p[0, 0]] + [p[m, n] for m, n in PATH_OUTCOMES])


def mean_photons_per_mode(config: SourceConfig) -> float:
    if config.source_kind == "antibunched":
        p = mode_photon_distribution(config)
        return float(np.arange(p.size) @ p)
    if config.source_kind == "path_entangled":
        p = mode_pair_distribution(config)[1:]
        return float(sum(pi * (m + n) for pi, (m, n) in zip(p, PATH_OUTCOMES)))
    raise ParameterError("mean photons per mode is defined for mode-based sources only")


def generated_photon_rate(config: SourceConfig) -> float:
    """Photons per second leaving the source, before the detector model."""
    kind = config.source_kind
    if kind == "pairs":
        return 2 * config.pair_rate
    if kind == "coherent":
        return config.coherent_rate
    return mean_photons_per_mode(config) / config.coherence_time


def expected_singles_rates(config: SourceConfig):
    """Mean detected counts per second on channels 0 and 1."""
    rate = generated_photon_rate(config)
    det = config.detector
    return tuple(rate * e / 2 + det.dark_rate for e in det.efficiency)


def _phase_boundaries(config, chunks):
    """Wiener phase at every chunk edge, drawn up front so chunks stay independent."""
    lengths = np.array([stop - start for start, stop in chunks], dtype=float) / PS_PER_S
    steps = _rng(config.seed, _STAGE_PHASE_BOUNDARY).standard_normal(len(chunks))
    return np.concatenate([[0.0], np.cumsum(steps * np.sqrt(config.phase_diffusion * lengths))])


def _bridge(rng, t, length, a, b, diffusion):
    """Wiener values at sorted times t in [0, length] pinned to a at 0 and b at length."""
    if diffusion == 0:
        return np.full(t.size, a)
    grid = np.concatenate([t, [length]]).astype(float)
    steps = rng.standard_normal(grid.size) * np.sqrt(diffusion * np.diff(grid, prepend=0.0) / PS_PER_S)
    free = np.cumsum(steps)
    frac = t / length
    return a + free[:-1] - frac * free[-1] + frac * (b - a)


def _mode_tables(config, probs_at_phase):
    """Cumulative non-vacuum probabilities on the phase grid, and their maximum."""
    if config.phase_diffusion == 0:
        grid = [probs_at_phase(0.0)]
    else:
        grid = [probs_at_phase(2 * math.pi * j / PHASE_GRID) for j in range(PHASE_GRID)]
    cum = np.cumsum(np.array(grid)[:, 1:], axis=1)
    return cum, float(cum[:, -1].max())


def _simulate_modes(config, probs_at_phase, place, threads, max_events):
    mode = config.mode_ps
    cum, p_max = _mode_tables(config, probs_at_phase)
    mean_n = mean_photons_per_mode(config)
    _check_capacity(mean_n / config.coherence_time, config, max_events)
    chunks = _chunks(config)
    edges = _phase_boundaries(config, chunks)

    def work(i, start, stop):
        rng = _rng(config.seed, _STAGE_SOURCE, i)
        idx = _bernoulli_indices(rng, (stop - start) // mode, p_max)
        mode_start = start + idx * mode
        if config.phase_diffusion > 0:
            phase_rng = _rng(config.seed, _STAGE_PHASE, i)
            phi = _bridge(phase_rng, (mode_start - start).astype(float), float(stop - start),
                          edges[i], edges[i + 1], config.phase_diffusion)
            row = np.rint(phi * PHASE_GRID / (2 * math.pi)).astype(np.int64) % PHASE_GRID
        else:
            row = np.zeros(idx.size, dtype=np.int64)
        u = rng.random(idx.size) * p_max
        outcome = (u[:, None] > cum[row]).sum(axis=1)
        hit = outcome < cum.shape[1]
        times, channels = place(rng, mode_start[hit], outcome[hit], mode)
        return _detect(_rng(config.seed, _STAGE_DETECTOR, i), times, channels, config.detector, start, stop)

    return _run_chunks(work, config, threads)


def _place_split(rng, mode_start, outcome, mode):
    # outcome k means k + 1 photons in the mode
    counts = outcome + 1
    starts = np.repeat(mode_start, counts)
    times = starts + _quantize(rng.random(starts.size) * mode)
    return times, rng.integers(0, 2, starts.size)


def _place_paths(rng, mode_start, outcome, mode):
    table = np.array(PATH_OUTCOMES)
    na, nb = table[outcome, 0], table[outcome, 1]
    starts = np.concatenate([np.repeat(mode_start, na), np.repeat(mode_start, nb)])
    channels = np.concatenate([np.zeros(na.sum(), np.int64), np.ones(nb.sum(), np.int64)])
    times = starts + _quantize(rng.random(starts.size) * mode)
    return times, channels


def simulate_antibunched(config: SourceConfig, threads: int = 1, max_events: int = DEFAULT_MAX_EVENTS):
    """Squeezed-coherent light, one temporal mode per T_c, split 50:50.

    Per mode the photon number follows |C_m|^2 of S(eta_k)|alpha>, where
    eta_k carries the Wiener phase drift and the static ``phase_offset``.
    """
    _require_kind(config, "antibunched")
    return _simulate_modes(config, lambda phi: mode_photon_distribution(config, phi), _place_split,
                           threads, max_events)


def simulate_path_entangled(config: SourceConfig, threads: int = 1, max_events: int = DEFAULT_MAX_EVENTS):
    """Pair source mixed with a coherent state in each arm; arm a -> stream 0."""
    _require_kind(config, "path_entangled")
    return _simulate_modes(config, lambda phi: mode_pair_distribution(config, phi), _place_paths,
                           threads, max_events)


_SIMULATORS = {
    "pairs": simulate_pairs,
    "coherent": simulate_coherent,
    "antibunched": simulate_antibunched,
    "path_entangled": simulate_path_entangled,
}


def simulate(config: SourceConfig, threads: int = 1, max_events: int = DEFAULT_MAX_EVENTS):
    """Dispatch on ``config.source_kind``; returns (stream_0, stream_1)."""
    return _SIMULATORS[config.source_kind](config, threads=threads, max_events=max_events)
