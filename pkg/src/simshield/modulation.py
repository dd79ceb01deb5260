"""Impulsive phase-modulation sequences and their finite-time spectra.

Each decay channel may be driven by a train of instantaneous phase kicks:
every interval tau the excited level acquires an extra phase theta, so the
level carries the factor

    epsilon(t) = exp(i * floor(t / tau) * theta).

Seen from the bath, the conjugate factor multiplies the coupling, and its
finite-time spectrum

    epsilon_t(omega) = integral_0^t exp(-i floor(s/tau) theta) e^{i omega s} ds

is the window function that decides which bath frequencies the channel
samples.  Its principal peak sits at the effective shift Delta = theta/tau
above the unmodulated resonance: kicking the phase forward sweeps the
sampled frequency up by Delta.  Secondary peaks repeat every 2*pi/tau.

The kicks are idealized limits of piecewise-constant level shifts
delta(t) (StarkShiftSchedule); at probe times the accumulated shift phase
must be an integer multiple of 2*pi for the modulation to leave measured
relative phases intact, which check_probe_phase verifies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ApproximationDomainError, ValidationError

__all__ = [
    "PulseSequence",
    "ModulationSpectrum",
    "StarkShiftSchedule",
    "ProbePhaseResult",
    "epsilon_time",
    "epsilon_spectrum",
    "effective_shift",
    "delta_approximation",
]

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PulseSequence:
    """Per-channel impulsive phase modulation: kick theta every interval tau.

    theta = 0 marks an unmodulated channel (tau is then irrelevant).
    theta is restricted to (-2*pi, 2*pi); larger kicks alias onto this range.
    """

    tau: tuple[float, ...]
    theta: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tau", tuple(float(x) for x in self.tau))
        object.__setattr__(self, "theta", tuple(float(x) for x in self.theta))
        if len(self.tau) != len(self.theta):
            raise ValidationError("pulses: tau and theta must have one entry per channel")
        if len(self.tau) == 0:
            raise ValidationError("pulses: at least one channel required")
        for c, (tau, theta) in enumerate(zip(self.tau, self.theta)):
            if not (tau > 0.0) or not math.isfinite(tau):
                raise ValidationError(f"pulses: tau[{c}] must be finite and > 0")
            if not (abs(theta) < _TWO_PI):
                raise ValidationError(f"pulses: theta[{c}] must lie in (-2*pi, 2*pi)")

    @classmethod
    def none(cls, n_channels: int) -> "PulseSequence":
        """No modulation on any channel."""
        return cls(tau=(1.0,) * n_channels, theta=(0.0,) * n_channels)

    @classmethod
    def uniform(cls, n_channels: int, tau: float, theta: float) -> "PulseSequence":
        """The same (tau, theta) kick train applied to every channel."""
        return cls(tau=(tau,) * n_channels, theta=(theta,) * n_channels)

    @property
    def n_channels(self) -> int:
        return len(self.tau)

    def is_modulated(self, channel: int) -> bool:
        return self.theta[channel] != 0.0

    def shifts(self) -> np.ndarray:
        """Effective spectral shift Delta = theta/tau per channel."""
        return np.array(self.theta) / np.array(self.tau)


def epsilon_time(seq: PulseSequence, channel: int, t) -> np.ndarray:
    """Phase factor exp(i * floor(t/tau) * theta) on the channel's level.

    Unit modulus for all t; piecewise constant with jumps at multiples of tau.
    """
    tau = seq.tau[channel]
    theta = seq.theta[channel]
    k = np.floor(np.asarray(t, dtype=float) / tau)
    return np.exp(1j * theta * k)


def effective_shift(seq: PulseSequence, channel: int) -> float:
    """Frequency shift Delta = theta/tau imposed by the kick train."""
    return seq.theta[channel] / seq.tau[channel]


def _free_segment(omega: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """integral_{t0}^{t1} e^{i omega s} ds, stable through omega = 0."""
    dt = t1 - t0
    # sinc keeps the omega -> 0 limit (dt) exact
    return dt * np.exp(0.5j * omega * (t0 + t1)) * np.sinc(omega * dt / _TWO_PI)


def _geometric_sum(phi: np.ndarray, n: int) -> np.ndarray:
    """sum_{k=0}^{n-1} e^{i k phi}, stable near phi = 0 (mod 2*pi)."""
    if n <= 0:
        return np.zeros_like(phi, dtype=complex)
    delta = phi - _TWO_PI * np.round(phi / _TWO_PI)
    half = 0.5 * delta
    den = np.sin(half)
    small = np.abs(delta) < 1e-10
    safe_den = np.where(small, 1.0, den)
    ratio = np.where(small, n * (1.0 - (n * n - 1.0) * delta**2 / 24.0), np.sin(n * half) / safe_den)
    return np.exp(1j * (n - 1) * half) * ratio


def epsilon_spectrum(seq: PulseSequence, channel: int, omega, t: float) -> np.ndarray:
    """Finite-time spectrum of the channel's bath-side modulation factor.

    Computes integral_0^t exp(-i floor(s/tau) theta) e^{i omega s} ds in
    closed form: a geometric sum over completed kick intervals plus the
    partial-interval tail, so the value is exact and continuous in both
    omega and t.  The result peaks at omega = Delta = theta/tau (with
    replicas every 2*pi/tau) and obeys epsilon_0(omega) = 0.

    Parameters
    ----------
    omega : float or array
        Evaluation frequencies.
    t : float
        Upper integration limit, >= 0.

    Returns
    -------
    complex ndarray shaped like omega.
    """
    if t < 0.0:
        raise ValidationError("epsilon_spectrum: t must be >= 0")
    tau = seq.tau[channel]
    theta = seq.theta[channel]
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    n = int(math.floor(t / tau))
    # completed intervals: panel k contributes e^{-i k theta} shifted copies
    # of the single-panel integral, a geometric series in (omega tau - theta)
    out = _free_segment(w, 0.0, tau) * _geometric_sum(w * tau - theta, n)
    if t > n * tau:
        out = out + np.exp(-1j * theta * n) * _free_segment(w, n * tau, t)
    if np.isscalar(omega) or np.asarray(omega).ndim == 0:
        return out[0]
    return out


@dataclass(frozen=True)
class ModulationSpectrum:
    """Evaluable finite-time modulation spectrum for every channel.

    flag "exact" evaluates the closed form of epsilon_spectrum; flag
    "delta" replaces |epsilon_t(omega)|^2 by a single normalized Gaussian
    peak of rms width 2*pi/t at the effective shift, carrying the full
    Parseval weight (integral of |epsilon_t|^2 equals 2*pi*t for any
    unit-modulus modulation).  The delta form is a design-loop shortcut
    for weak kicks |theta| < pi; it drops the 2*pi/tau replica peaks.
    """

    sequence: PulseSequence
    flag: str = "exact"

    def __post_init__(self) -> None:
        if self.flag not in ("exact", "delta"):
            raise ValidationError("modulation spectrum: flag must be 'exact' or 'delta'")

    def evaluate(self, channel: int, omega, t: float) -> np.ndarray:
        if self.flag == "exact":
            return epsilon_spectrum(self.sequence, channel, omega, t)
        theta = self.sequence.theta[channel]
        if abs(theta) >= math.pi:
            raise ApproximationDomainError(
                f"delta approximation needs |theta| < pi, got theta[{channel}] = {theta:.6g}")
        w = np.asarray(omega, dtype=float)
        if t <= 0.0:
            return np.zeros(np.shape(w), dtype=complex)
        shift = effective_shift(self.sequence, channel)
        sigma = _TWO_PI / t
        density = np.exp(-0.5 * ((w - shift) / sigma) ** 2) / (sigma * math.sqrt(_TWO_PI))
        return np.sqrt(_TWO_PI * t * density).astype(complex)


def delta_approximation(seq: PulseSequence, channel: int | None = None) -> ModulationSpectrum:
    """Weak-kick single-peak model of the modulation spectrum.

    Valid only for kick areas |theta| < pi (checked for `channel`, or for
    every channel when omitted); larger kicks put significant weight into
    replica peaks and the single-Gaussian model misrepresents them.
    """
    to_check = range(seq.n_channels) if channel is None else (channel,)
    for c in to_check:
        if abs(seq.theta[c]) >= math.pi:
            raise ApproximationDomainError(
                f"delta approximation needs |theta| < pi, got theta[{c}] = {seq.theta[c]:.6g}")
    return ModulationSpectrum(sequence=seq, flag="delta")


@dataclass(frozen=True)
class ProbePhaseResult:
    """Outcome of the probe-phase constraint check, per channel."""

    passed: bool
    m: tuple[int, ...]          # nearest integer multiple of 2*pi
    residual: tuple[float, ...]  # |accumulated phase - 2*pi*m|


@dataclass(frozen=True)
class StarkShiftSchedule:
    """Piecewise-constant level-shift schedules delta(t), one per channel.

    Each channel holds (start, end, value) segments with delta = 0 outside
    them.  The accumulated phase integral_0^t delta(s) ds is the phase the
    shift imprints on the level; a schedule is probe-consistent at
    probe_time when that phase is an integer multiple of 2*pi on every
    channel, so the modulation leaves measured relative phases unchanged.
    Construction does not enforce the constraint; check_probe_phase
    reports it.
    """

    segments: tuple[tuple[tuple[float, float, float], ...], ...]
    probe_time: float

    def __post_init__(self) -> None:
        if not (self.probe_time > 0.0):
            raise ValidationError("stark schedule: probe_time must be > 0")
        for c, segs in enumerate(self.segments):
            for start, end, _ in segs:
                if not (end > start >= 0.0):
                    raise ValidationError(f"stark schedule: channel {c} has an empty or negative segment")

    @classmethod
    def from_pulse_sequence(cls, seq: PulseSequence, probe_time: float,
                            kick_fraction: float = 1e-9) -> "StarkShiftSchedule":
        """Impulsive limit: a rectangle of area theta ending at each multiple of tau.

        kick_fraction sets the rectangle width as a fraction of tau; the
        accumulated phase is exact regardless because segments are
        integrated analytically.
        """
        chans = []
        for c in range(seq.n_channels):
            tau, theta = seq.tau[c], seq.theta[c]
            if theta == 0.0:
                chans.append(())
                continue
            width = kick_fraction * tau
            n_kicks = int(math.floor(probe_time / tau + 1e-12))
            segs = []
            for k in range(1, n_kicks + 1):
                end = k * tau
                start = end - width
                # divide by the representable width so value*(end-start)
                # reproduces theta to one rounding
                segs.append((start, end, theta / (end - start)))
            chans.append(tuple(segs))
        return cls(segments=tuple(chans), probe_time=probe_time)

    @property
    def n_channels(self) -> int:
        return len(self.segments)

    def phase(self, channel: int, t: float) -> float:
        """Accumulated phase integral_0^t delta(s) ds."""
        acc = 0.0
        for start, end, value in self.segments[channel]:
            overlap = min(end, t) - max(start, 0.0)
            if overlap > 0.0:
                acc += value * overlap
        return acc

    def modulation_factor(self, channel: int, t: float) -> complex:
        """exp(i * accumulated phase); for the impulsive schedule this equals epsilon_time."""
        return complex(np.exp(1j * self.phase(channel, t)))

    def check_probe_phase(self) -> ProbePhaseResult:
        """Verify the accumulated phase at probe_time is 2*pi*m per channel.

        residual = |phase - 2*pi*round(phase/2*pi)|; pass iff all < 1e-9.
        """
        ms, residuals = [], []
        for c in range(self.n_channels):
            total = self.phase(c, self.probe_time)
            m = int(round(total / _TWO_PI))
            ms.append(m)
            residuals.append(abs(total - _TWO_PI * m))
        return ProbePhaseResult(passed=all(r < 1e-9 for r in residuals),
                                m=tuple(ms), residual=tuple(residuals))
