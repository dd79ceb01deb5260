"""Shared-bath correlation model and its coupling spectrum.

A system of N particles, each with one or more excited levels, decays into
a common zero-temperature reservoir.  A decay channel is one excited level
of one particle.  The bath enters the dynamics only through the two-time
correlation matrix Phi_pq(t) between channels p and q and its frequency
transform

    G(omega) = (1/2pi) * integral Phi(t) exp(i omega t) dt,

normalized so that a single unmodulated channel at frequency omega0 loses
amplitude at the asymptotic rate pi*G(omega0) (population rate 2pi*G(omega0)).

The built-in model is a product-of-Gaussians memory kernel with an
algebraic distance suppression between particles:

    Phi_pq(t) = gamma * d_n * d_n' * exp(-t^2/4 t_p^2) * exp(-t^2/4 t_q^2)
                / (k0_rmin + |x_j - x_j'|)

with d_n = cos(eta_n) a per-level dipole projection, t_p the per-channel
correlation time, and x_j the dimensionless particle coordinate (k0 * r_j).
Every entry is then a Gaussian in t, so G(omega) is an explicit Gaussian
matrix; other kernels can be plugged in through the BathModel interface.

Caution: for unequal correlation times the Gaussian-product model is not
positive semidefinite at every frequency (cross entries can exceed the
geometric mean of the diagonals far in the wings).  Construction checks
this on a sampled grid; policy "warn" records and warns, "strict" raises.
"""

from __future__ import annotations

import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

__all__ = [
    "Channel",
    "CouplingSpectrum",
    "BathModel",
    "GaussianBathModel",
    "channel_label",
    "particle_blocks",
]


@dataclass(frozen=True)
class Channel:
    """One decay channel: excited level `level` of particle `particle`.

    Both indices are 1-based.  `omega` is the transition frequency of the
    level in the same inverse-time units as the bath rate gamma.
    """

    particle: int
    level: int
    omega: float

    def __post_init__(self) -> None:
        if self.particle < 1 or self.level < 1:
            raise ValidationError("channel: particle and level indices are 1-based")
        if not (self.omega > 0.0) or not math.isfinite(self.omega):
            raise ValidationError(f"channel {self.particle},{self.level}: omega must be finite and > 0")


def channel_label(ch: Channel) -> str:
    """Short label like 'A1' (particle letter, level number)."""
    if ch.particle <= 26:
        return f"{chr(ord('A') + ch.particle - 1)}{ch.level}"
    return f"P{ch.particle}L{ch.level}"


def particle_blocks(channels: tuple[Channel, ...]) -> dict[int, list[int]]:
    """Map particle index -> list of flattened channel positions."""
    blocks: dict[int, list[int]] = {}
    for i, ch in enumerate(channels):
        blocks.setdefault(ch.particle, []).append(i)
    return blocks


@dataclass(frozen=True)
class CouplingSpectrum:
    """Evaluable coupling spectrum G(omega) of a Gaussian-kernel bath.

    Entry (p, q) is amplitude[p, q] * exp(-omega^2 / (4 * decay[p, q])),
    the exact transform of Phi_pq(t) = phi0[p, q] * exp(-decay[p, q] t^2).

    support_halfwidth bounds the frequency band outside which every entry
    is negligible (6 standard deviations of the widest entry).
    """

    amplitude: np.ndarray  # (N, N) peak values G_pq(0)
    decay: np.ndarray      # (N, N) Gaussian parameters a_pq of the time kernel
    phi0: np.ndarray       # (N, N) Phi_pq(0), kept for diagnostics and windows

    def __post_init__(self) -> None:
        a = np.asarray(self.amplitude, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("spectrum: amplitude must be a square matrix")

    @property
    def n_channels(self) -> int:
        return self.amplitude.shape[0]

    @property
    def support_halfwidth(self) -> float:
        """6 sigma of the widest entry; entries are < 2e-8 relative outside."""
        return float(6.0 * np.sqrt(2.0 * np.max(self.decay)))

    def evaluate(self, omega) -> np.ndarray:
        """Return G(omega); shape (N, N) for scalar omega, (M, N, N) for arrays."""
        w = np.asarray(omega, dtype=float)
        out = self.amplitude * np.exp(-np.multiply.outer(w**2, 1.0 / (4.0 * self.decay)))
        return out

    def min_eigenvalue(self, omegas) -> float:
        """Smallest eigenvalue of G over the sampled frequencies (PSD diagnostic)."""
        vals = self.evaluate(np.atleast_1d(np.asarray(omegas, dtype=float)))
        return float(np.min(np.linalg.eigvalsh(vals)))


class BathModel(ABC):
    """Interface the decoherence machinery needs from a bath.

    Implementations must provide the channel layout, a vectorized
    correlation kernel per channel pair, a memory half-width beyond which
    the kernel is negligible, and the coupling spectrum.
    """

    levels_per_particle: tuple[int, ...]

    @property
    def n_channels(self) -> int:
        return sum(self.levels_per_particle)

    def channel_layout(self) -> list[tuple[int, int]]:
        """Flattened (particle, level) pairs, particle-major, both 1-based."""
        out = []
        for j, m in enumerate(self.levels_per_particle, start=1):
            out.extend((j, n) for n in range(1, m + 1))
        return out

    @abstractmethod
    def phi(self, p: int, q: int, t) -> np.ndarray:
        """Correlation Phi_pq(t) for flattened channel indices, vectorized in t."""

    @abstractmethod
    def memory_halfwidth(self, p: int, q: int, rtol: float = 1e-8) -> float:
        """Time beyond which |Phi_pq| is below ~rtol/100 of its peak."""

    @abstractmethod
    def spectrum(self) -> CouplingSpectrum:
        """Coupling spectrum G(omega) in the pi*G(omega0) amplitude-rate calibration."""

    def max_correlation_time(self) -> float:
        """Longest memory time scale; used by validity diagnostics."""
        widths = [self.memory_halfwidth(p, p) for p in range(self.n_channels)]
        return max(widths) / 4.8


@dataclass(frozen=True)
class GaussianBathModel(BathModel):
    """Product-of-Gaussians correlation model (see module docstring).

    Parameters
    ----------
    gamma : float
        Overall decay-rate scale, >= 0.
    eta : tuple of float
        Per-level dipole angles eta_n (radians); d_n = cos(eta_n).
        Indexed by level, shared across particles.
    t_corr : tuple of tuple of float
        Per-channel correlation times, one inner tuple per particle.
    k0_rmin : float
        Dimensionless minimum-distance regulator in the denominator, > 0.
    positions : tuple of float
        Dimensionless particle coordinates k0*r_j, one per particle.
    uncoupled_particles : bool
        If True, zero out every cross-particle correlation (independent
        reservoirs); within-particle entries are unchanged.
    psd : str
        "warn" (default) or "strict" handling of the sampled
        positive-semidefiniteness check of G.
    """

    gamma: float
    eta: tuple[float, ...]
    t_corr: tuple[tuple[float, ...], ...]
    k0_rmin: float
    positions: tuple[float, ...]
    uncoupled_particles: bool = False
    psd: str = "warn"
    psd_violation: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        if not (self.gamma >= 0.0) or not math.isfinite(self.gamma):
            raise ValidationError("bath: gamma must be finite and >= 0")
        if not (self.k0_rmin > 0.0):
            raise ValidationError("bath: k0_rmin must be > 0")
        if len(self.positions) != len(self.t_corr):
            raise ValidationError("bath: positions and t_corr must have one entry per particle")
        if max(len(ts) for ts in self.t_corr) > len(self.eta):
            raise ValidationError("bath: eta must cover every level index in t_corr")
        for ts in self.t_corr:
            if len(ts) == 0:
                raise ValidationError("bath: every particle needs at least one level")
            for tc in ts:
                if not (tc > 0.0) or not math.isfinite(tc):
                    raise ValidationError("bath: correlation times must be finite and > 0")
        if self.psd not in ("warn", "strict"):
            raise ValidationError("bath: psd policy must be 'warn' or 'strict'")
        object.__setattr__(self, "levels_per_particle", tuple(len(ts) for ts in self.t_corr))
        self._check_psd()

    # -- layout -------------------------------------------------------------

    def _flat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per flattened channel: particle position, correlation time, dipole d."""
        pos, tc, d = [], [], []
        for j, ts in enumerate(self.t_corr):
            for n, t in enumerate(ts):
                pos.append(self.positions[j])
                tc.append(t)
                d.append(math.cos(self.eta[n]))
        return np.array(pos), np.array(tc), np.array(d)

    def _pair_params(self) -> tuple[np.ndarray, np.ndarray]:
        """(phi0, a) matrices of Phi_pq(t) = phi0 * exp(-a t^2)."""
        pos, tc, d = self._flat()
        denom = self.k0_rmin + np.abs(pos[:, None] - pos[None, :])
        phi0 = self.gamma * np.outer(d, d) / denom
        if self.uncoupled_particles:
            phi0 = np.where(self._same_particle_mask(), phi0, 0.0)
        a = 1.0 / (4.0 * tc[:, None] ** 2) + 1.0 / (4.0 * tc[None, :] ** 2)
        return phi0, a

    def _same_particle_mask(self) -> np.ndarray:
        idx = np.array([j for j, _ in self.channel_layout()])
        return idx[:, None] == idx[None, :]

    # -- contract -----------------------------------------------------------

    def phi(self, p: int, q: int, t) -> np.ndarray:
        phi0, a = self._pair_params()
        tt = np.asarray(t, dtype=float)
        return phi0[p, q] * np.exp(-a[p, q] * tt**2)

    def correlation(self, j: int, n: int, jp: int, np_: int, t) -> np.ndarray:
        """Phi between channels (j, n) and (jp, np_), all 1-based, vectorized in t."""
        layout = self.channel_layout()
        try:
            p = layout.index((j, n))
            q = layout.index((jp, np_))
        except ValueError as exc:
            raise IndexError(f"no such channel pair ({j},{n}),({jp},{np_})") from exc
        return self.phi(p, q, t)

    def memory_halfwidth(self, p: int, q: int, rtol: float = 1e-8) -> float:
        _, a = self._pair_params()
        # exp(-a W^2) ~ rtol/100, floored so short kernels are still resolved
        return math.sqrt(max(math.log(100.0 / max(rtol, 1e-300)), 10.0) / a[p, q])

    def max_correlation_time(self) -> float:
        return max(max(ts) for ts in self.t_corr)

    def spectrum(self) -> CouplingSpectrum:
        phi0, a = self._pair_params()
        amp = phi0 * np.sqrt(np.pi / a) / (2.0 * np.pi)
        return CouplingSpectrum(amplitude=amp, decay=a, phi0=phi0)

    # -- validation ---------------------------------------------------------

    def _check_psd(self) -> None:
        if self.n_channels == 1 or self.gamma == 0.0:
            return
        spec = self.spectrum()
        omegas = np.linspace(0.0, spec.support_halfwidth, 49)
        vals = spec.evaluate(omegas)
        mineig = float(np.min(np.linalg.eigvalsh(vals)))
        scale = float(np.max(spec.amplitude.diagonal()))
        if mineig < -1e-12 * scale:
            object.__setattr__(self, "psd_violation", -mineig)
            msg = (f"coupling spectrum not positive semidefinite on the sampled grid "
                   f"(min eigenvalue {mineig:.3e}); unequal correlation times make the "
                   f"Gaussian-product kernel indefinite in the wings")
            if self.psd == "strict":
                raise ValidationError("bath: " + msg)
            warnings.warn(msg, stacklevel=3)
