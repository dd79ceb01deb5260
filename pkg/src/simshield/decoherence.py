"""Dynamically-modified decoherence matrix: rates R(t) and integrals J(t).

In the rotating frame the single-excitation amplitudes obey
d(alpha)/dt = -R(t) alpha with the instantaneous rate matrix

    R_pq(t) = e_p(t) e^{i w_p t} * integral_0^t e_q*(s) e^{-i w_q s}
              Phi_pq(t - s) ds,

where e_p(t) is the channel's kick phase factor (modulation.epsilon_time)
and Phi the bath correlation matrix.  J(t) = integral_0^t R is the
decoherence matrix: its real diagonal drives population loss, the
off-diagonal entries mix channels through the shared bath, and the
imaginary parts are bath-induced level shifts.

Two evaluation paths are provided and cross-checked:

  * decoherence_matrix: the normative time-domain double integral on a
    pulse-aligned time grid, refined until J stops changing;
  * overlap_decoherence_matrix: the frequency-domain overlap
    (1/2) integral G(w) K_t(w) dw, which equals the Hermitian part of
    J(t); it cannot see the anti-Hermitian (level-shift) part.

The memory kernel is short ranged, so the inner integral only runs over
the last few correlation times, making the cost per output time O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bath import BathModel, Channel, CouplingSpectrum
from .errors import IntegratorError, ValidationError, WindowError
from .modulation import ModulationSpectrum, PulseSequence
from .quadrature import adaptive_batch

__all__ = [
    "QuadratureConfig",
    "DecoherenceTrajectory",
    "decoherence_matrix",
    "rate_matrix",
    "overlap_decoherence_matrix",
    "modulation_kernel",
    "hermitian_part",
    "build_time_grid",
]

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances and discretization knobs for the decoherence integrals.

    rtol drives the adaptive inner quadrature; grid_rtol bounds the
    relative change of J under time-grid halving; window_multiplier sets
    the frequency window of the overlap path in units of the spectral
    rms width (plus the largest effective shift).
    """

    rtol: float = 1e-8
    max_subdivisions: int = 256
    window_multiplier: float = 6.0
    steps_per_tau: int = 20
    min_time_points: int = 400
    grid_rtol: float = 1e-7
    max_grid_refinements: int = 5

    def __post_init__(self) -> None:
        if not (0.0 < self.rtol <= 1e-2):
            raise ValidationError("quadrature: rtol must lie in (0, 1e-2]")
        if self.max_subdivisions < 64:
            raise ValidationError("quadrature: max_subdivisions must be >= 64")
        if not (self.window_multiplier > 0.0):
            raise ValidationError("quadrature: window_multiplier must be > 0")
        if self.steps_per_tau < 4 or self.min_time_points < 2:
            raise ValidationError("quadrature: grid too coarse (steps_per_tau >= 4, min_time_points >= 2)")
        if not (self.grid_rtol > 0.0) or self.max_grid_refinements < 0:
            raise ValidationError("quadrature: grid_rtol must be > 0 and max_grid_refinements >= 0")


@dataclass(frozen=True)
class DecoherenceTrajectory:
    """R(t) and J(t) on a shared time grid.

    rate[k] is the right-limit of R at time_grid[k] (the value governing
    the following interval); the final entry is the left-limit since no
    interval follows.  rate_left and rate_mid carry the left-limit and
    midpoint values per interval for high-order steppers.  J is
    continuous; rates jump at pulse times, which are always grid points.
    """

    channels: tuple[Channel, ...]
    time_grid: np.ndarray
    rate: np.ndarray          # (M, N, N) right-limits
    rate_left: np.ndarray     # (M, N, N) left-limits
    rate_mid: np.ndarray      # (M-1, N, N) interval midpoints
    integrated: np.ndarray    # (M, N, N) J(t_k)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    def index_of(self, t: float) -> int:
        """Grid index of time t; t must lie on the grid."""
        k = int(np.searchsorted(self.time_grid, t))
        for i in (k - 1, k, k + 1):
            if 0 <= i < len(self.time_grid) and abs(self.time_grid[i] - t) <= 1e-9 * max(1.0, self.horizon):
                return i
        raise ValidationError(f"time {t} is not on the trajectory grid")

    def at(self, t: float) -> np.ndarray:
        """J at time t, linearly interpolated between grid points."""
        if not (0.0 <= t <= self.horizon + 1e-12):
            raise ValidationError(f"time {t} outside the trajectory horizon {self.horizon}")
        k = int(np.clip(np.searchsorted(self.time_grid, t) - 1, 0, len(self.time_grid) - 2))
        t0, t1 = self.time_grid[k], self.time_grid[k + 1]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1.0 - w) * self.integrated[k] + w * self.integrated[k + 1]

    def final(self) -> np.ndarray:
        return self.integrated[-1]


def hermitian_part(m: np.ndarray) -> np.ndarray:
    """(M + M^dagger)/2 along the last two axes."""
    return 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))


def _validate(model: BathModel, seq: PulseSequence, channels: tuple[Channel, ...]) -> None:
    n = len(channels)
    if n == 0:
        raise ValidationError("decoherence: at least one channel required")
    if model.n_channels != n or seq.n_channels != n:
        raise ValidationError(
            f"decoherence: channel count mismatch (channels {n}, bath {model.n_channels}, pulses {seq.n_channels})")
    pairs = [(ch.particle, ch.level) for ch in channels]
    if len(set(pairs)) != n:
        raise ValidationError("decoherence: (particle, level) pairs must be unique")
    if pairs != model.channel_layout():
        raise ValidationError("decoherence: channel order must match the bath layout (particle-major)")


def build_time_grid(seq: PulseSequence, horizon: float, config: QuadratureConfig,
                    extra=()) -> np.ndarray:
    """Uniform grid over [0, horizon] with all pulse times as grid points.

    Step is min(tau)/steps_per_tau over modulated channels (horizon /
    min_time_points when nothing is modulated), never fewer than
    min_time_points intervals; requested extra times are merged in.
    """
    if not (horizon > 0.0) or not math.isfinite(horizon):
        raise ValidationError("decoherence: horizon must be finite and > 0")
    taus = sorted({seq.tau[c] for c in range(seq.n_channels) if seq.is_modulated(c)})
    step = taus[0] / config.steps_per_tau if taus else horizon / config.min_time_points
    n = max(int(math.ceil(horizon / step)), config.min_time_points)
    parts = [np.linspace(0.0, horizon, n + 1)]
    for tau in taus:
        k_max = int(math.floor(horizon / tau + 1e-12))
        if k_max >= 1:
            parts.append(np.arange(1, k_max + 1) * tau)
    extra = np.asarray(list(extra), dtype=float)
    if extra.size:
        if extra.min() < 0.0 or extra.max() > horizon * (1.0 + 1e-12):
            raise ValidationError("decoherence: requested times must lie in [0, horizon]")
        parts.append(np.clip(extra, 0.0, horizon))
    grid = np.unique(np.concatenate(parts))
    keep = np.concatenate([[True], np.diff(grid) > 1e-12 * max(horizon, 1.0)])
    grid = grid[keep]
    grid[0], grid[-1] = 0.0, horizon
    return grid


def _inner_panels(t: float, lo: float, tau: float, modulated: bool, max_width: float):
    """Cut [lo, t] at pulse times and cap panel width; returns (lows, highs)."""
    cuts = [lo]
    if modulated:
        k = math.floor(lo / tau) + 1
        while k * tau < t - 1e-15 * max(t, 1.0):
            if k * tau > lo:
                cuts.append(k * tau)
            k += 1
    cuts.append(t)
    lows, highs = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        pieces = max(1, int(math.ceil((b - a) / max_width)))
        edges = np.linspace(a, b, pieces + 1)
        lows.extend(edges[:-1])
        highs.extend(edges[1:])
    return lows, highs


def _ensure_core(model: BathModel, seq: PulseSequence, channels, times, config: QuadratureConfig,
                 cache: dict) -> None:
    """Fill cache[t] with the inner-integral matrix I(t) for missing times.

    I_pq(t) = integral over the memory window of
    e^{-i(theta_q floor(s/tau_q) + w_q s)} Phi_pq(t - s) ds; it is the
    continuous core of R, missing only the row phase prefactor.
    """
    missing = [float(t) for t in times if float(t) not in cache]
    if not missing:
        return
    n = len(channels)
    omegas = np.array([ch.omega for ch in channels])
    out = np.zeros((len(missing), n, n), dtype=complex)

    for q in range(n):
        tau_q, theta_q = seq.tau[q], seq.theta[q]
        modulated = seq.is_modulated(q)
        w_q = omegas[q]
        for p in range(n):
            big_w = model.memory_halfwidth(p, q, config.rtol)
            phi0 = float(np.abs(model.phi(p, q, 0.0)))
            if phi0 == 0.0:
                continue
            lows, highs, gids = [], [], []
            for i, t in enumerate(missing):
                if t <= 0.0:
                    continue
                lo = max(0.0, t - big_w)
                seg_lo, seg_hi = _inner_panels(t, lo, tau_q, modulated, big_w / 3.0)
                lows.extend(seg_lo)
                highs.extend(seg_hi)
                gids.extend([i] * len(seg_lo))
            if not lows:
                continue

            if modulated:
                def f(x, tpay, p=p, q=q, w=w_q, th=theta_q, tau=tau_q):
                    return np.exp(-1j * (th * np.floor(x / tau) + w * x)) * model.phi(p, q, tpay - x)
            else:
                def f(x, tpay, p=p, q=q, w=w_q):
                    return np.exp(-1j * w * x) * model.phi(p, q, tpay - x)

            payload = np.array([missing[g] for g in gids])
            vals = adaptive_batch(f, np.array(lows), np.array(highs), np.array(gids), payload,
                                  n_groups=len(missing), rtol=config.rtol,
                                  atol=config.rtol * phi0 * big_w,
                                  max_subdivisions=config.max_subdivisions)
            out[:, p, q] = vals[:, 0]

    for i, t in enumerate(missing):
        cache[t] = out[i]


def _assemble(grid: np.ndarray, model: BathModel, seq: PulseSequence, channels,
              config: QuadratureConfig, cache: dict):
    """Rates and Simpson-integrated J on the given grid (directional limits)."""
    mids = 0.5 * (grid[:-1] + grid[1:])
    _ensure_core(model, seq, channels, np.concatenate([grid, mids]), config, cache)
    core_g = np.stack([cache[float(t)] for t in grid])
    core_m = np.stack([cache[float(t)] for t in mids])

    omegas = np.array([ch.omega for ch in channels])
    taus = np.array(seq.tau)
    thetas = np.array(seq.theta)
    # pulse counters are constant inside each interval; read them at midpoints
    k_int = np.floor(mids[:, None] / taus[None, :])
    kick_phase = np.exp(1j * thetas[None, :] * k_int)                    # (M-1, N)

    def row_prefactor(tvals, phases):
        return phases * np.exp(1j * omegas[None, :] * tvals[:, None])

    pre_r = row_prefactor(grid[:-1], kick_phase)
    pre_m = row_prefactor(mids, kick_phase)
    pre_l = row_prefactor(grid[1:], kick_phase)
    r_right = pre_r[:, :, None] * core_g[:-1]
    r_mid = pre_m[:, :, None] * core_m
    r_left = pre_l[:, :, None] * core_g[1:]

    h = np.diff(grid)
    dj = (h / 6.0)[:, None, None] * (r_right + 4.0 * r_mid + r_left)
    n = len(channels)
    j = np.zeros((len(grid), n, n), dtype=complex)
    np.cumsum(dj, axis=0, out=j[1:])

    rate = np.concatenate([r_right, r_left[-1:]], axis=0)
    rate_left = np.concatenate([r_right[:1], r_left], axis=0)
    return rate, rate_left, r_mid, j


def decoherence_matrix(model: BathModel, seq: PulseSequence, channels: tuple[Channel, ...],
                       horizon: float, times=(), config: QuadratureConfig | None = None,
                       ) -> DecoherenceTrajectory:
    """Assemble R(t) and J(t) = integral_0^t R over [0, horizon].

    The time grid is pulse-aligned (build_time_grid) and the per-interval
    Simpson integration is repeated on halved grids until J changes by
    less than grid_rtol relative to its final magnitude; the refined grid
    is returned.  `times` lists extra output instants merged into the
    grid (use index_of to read them back).

    Raises
    ------
    IntegratorError
        If the grid refinement loop does not converge.
    NumericalToleranceError
        If the adaptive inner quadrature fails on some entry.
    """
    config = config or QuadratureConfig()
    _validate(model, seq, channels)
    grid = build_time_grid(seq, horizon, config, extra=times)
    cache: dict = {}

    rate, rate_left, rate_mid, j = _assemble(grid, model, seq, channels, config, cache)
    refinements = 0
    while True:
        fine = np.unique(np.concatenate([grid, 0.5 * (grid[:-1] + grid[1:])]))
        f_rate, f_left, f_mid, f_j = _assemble(fine, model, seq, channels, config, cache)
        idx = np.searchsorted(fine, grid)
        scale = float(np.max(np.abs(f_j[-1])))
        diff = float(np.max(np.abs(f_j[idx] - j)))
        if diff <= config.grid_rtol * max(scale, 1e-300):
            grid, rate, rate_left, rate_mid, j = fine, f_rate, f_left, f_mid, f_j
            break
        grid, rate, rate_left, rate_mid, j = fine, f_rate, f_left, f_mid, f_j
        refinements += 1
        if refinements > config.max_grid_refinements:
            raise IntegratorError(
                f"time grid did not converge after {config.max_grid_refinements} refinements "
                f"(last relative change {diff / max(scale, 1e-300):.3e})")

    diagnostics = {
        "grid_points": int(len(grid)),
        "grid_refinements": refinements,
        "grid_step": float(np.max(np.diff(grid))),
        "rtol": config.rtol,
        "validity_ratio": float(np.max(np.abs(rate)) * model.max_correlation_time()),
    }
    return DecoherenceTrajectory(channels=tuple(channels), time_grid=grid, rate=rate,
                                 rate_left=rate_left, rate_mid=rate_mid, integrated=j,
                                 diagnostics=diagnostics)


def rate_matrix(model: BathModel, seq: PulseSequence, channels: tuple[Channel, ...],
                t: float, config: QuadratureConfig | None = None) -> np.ndarray:
    """R(t) alone; at pulse times this is the right-limit value."""
    config = config or QuadratureConfig()
    _validate(model, seq, channels)
    if t < 0.0:
        raise ValidationError("rate_matrix: t must be >= 0")
    cache: dict = {}
    _ensure_core(model, seq, channels, [float(t)], config, cache)
    core = cache[float(t)]
    omegas = np.array([ch.omega for ch in channels])
    kicks = np.floor(t / np.asarray(seq.tau))
    prefactor = np.exp(1j * (np.asarray(seq.theta) * kicks + omegas * t))
    return prefactor[:, None] * core


def modulation_kernel(modspec: ModulationSpectrum, channels: tuple[Channel, ...],
                      omega, t: float) -> np.ndarray:
    """Rank-1 PSD kernel K_pq(w) = conj(E_p(w - w_p)) E_q(w - w_q) at time t."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    cols = [np.atleast_1d(modspec.evaluate(c, w - ch.omega, t)) for c, ch in enumerate(channels)]
    e = np.stack(cols, axis=-1)                                   # (M, N)
    k = np.conj(e)[:, :, None] * e[:, None, :]
    if np.isscalar(omega) or np.asarray(omega).ndim == 0:
        return k[0]
    return k


def overlap_decoherence_matrix(spectrum: CouplingSpectrum, modspec: ModulationSpectrum,
                               channels: tuple[Channel, ...], t: float,
                               config: QuadratureConfig | None = None) -> np.ndarray:
    """Hermitian part of J(t) via the spectral overlap (1/2) integral G.K_t.

    The frequency window is window_multiplier rms widths of the coupling
    spectrum plus the largest effective shift; a window at whose edges G
    is not negligible raises WindowError.  The anti-Hermitian level-shift
    content of J is not reachable on this path.
    """
    config = config or QuadratureConfig()
    n = len(channels)
    if spectrum.n_channels != n or modspec.sequence.n_channels != n:
        raise ValidationError("overlap: channel count mismatch")
    if t < 0.0:
        raise ValidationError("overlap: t must be >= 0")
    if t == 0.0:
        return np.zeros((n, n), dtype=complex)

    sigma = spectrum.support_halfwidth / 6.0
    shifts = modspec.sequence.shifts()
    half = config.window_multiplier * sigma + float(np.max(np.abs(shifts), initial=0.0))
    probe = np.linspace(-half, half, 201)
    gscale = float(np.max(np.abs(spectrum.evaluate(probe))))
    gedge = float(np.max(np.abs(spectrum.evaluate(np.array([-half, half])))))
    if gscale > 0.0 and gedge > 1e-10 * gscale:
        raise WindowError(
            f"frequency window [{-half:.3g}, {half:.3g}] too small: spectrum edge/peak "
            f"ratio {gedge / gscale:.2e} exceeds 1e-10; raise window_multiplier")

    width = min(_TWO_PI / t, half / 8.0)
    n_panels = max(16, int(math.ceil(2.0 * half / width)))
    edges = np.linspace(-half, half, n_panels + 1)

    omegas = np.array([ch.omega for ch in channels])

    def f(x, _pay):
        e = np.stack([np.atleast_1d(modspec.evaluate(c, x - omegas[c], t)) for c in range(n)], axis=-1)
        g = spectrum.evaluate(x)
        k = np.conj(e)[:, :, None] * e[:, None, :]
        return (0.5 * g * k).reshape(len(x), n * n)

    scale = 0.5 * gscale * _TWO_PI * t
    vals = adaptive_batch(f, edges[:-1], edges[1:], np.zeros(n_panels, dtype=int),
                          np.zeros(n_panels), n_groups=1, rtol=config.rtol,
                          atol=config.rtol * scale,
                          max_subdivisions=config.max_subdivisions + 2 * n_panels)
    return vals[0].reshape(n, n)
