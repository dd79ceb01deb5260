"""Scenario files: parsing, validation, canonical serialization.

A scenario is a single JSON document describing the bath, the channel
frequencies, the pulse sequence, the initial state, and run settings.
Time-like run quantities (horizon, output step, pulse periods) may be
given in units of (10*gamma)^-1 by setting time.unit to
"inverse_ten_gamma"; everything else is in natural units.

parse_scenario also accepts a run manifest (the JSON written next to
results): the embedded "scenario" object is unwrapped, so a finished
run's manifest reproduces the run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bath import Channel, GaussianBathModel
from .decoherence import QuadratureConfig
from .dynamics import named_initial_state
from .errors import ValidationError
from .modulation import PulseSequence

__all__ = ["Scenario", "parse_scenario", "scenario_from_dict", "serialize_scenario"]

_NAMED_STATES = ("bell_singlet", "bell_triplet", "dark_mes")


@dataclass(frozen=True, eq=False)
class Scenario:
    """Fully resolved run description (all times in natural units)."""

    model: GaussianBathModel
    channels: tuple[Channel, ...]
    sequence: PulseSequence
    initial_state: np.ndarray
    initial_name: str | None
    horizon: float
    output_step: float
    time_unit: str
    config: QuadratureConfig
    symmetry_kind: str = "iip"
    symmetry_threshold: float = 0.05
    symmetry_samples: int = 64
    opt_free_tau: tuple[int, ...] = ()
    opt_free_theta: tuple[int, ...] = ()
    opt_weight: float = 1.0
    opt_budget: int = 200
    opt_tau_bounds: tuple[float, float] = (0.2, 2.5)
    opt_theta_bounds: tuple[float, float] = (0.05, 1.9 * math.pi)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def output_times(self) -> np.ndarray:
        n = int(round(self.horizon / self.output_step))
        if abs(n * self.output_step - self.horizon) > 1e-9 * self.horizon:
            n = int(math.floor(self.horizon / self.output_step))
        times = np.arange(n + 1) * self.output_step
        if times[-1] < self.horizon * (1.0 - 1e-12):
            times = np.append(times, self.horizon)
        return times


def _req(data: dict, key: str, where: str):
    if key not in data:
        raise ValidationError(f"scenario: missing field '{where}.{key}'" if where else
                              f"scenario: missing field '{key}'")
    return data[key]


def _floats(value, where: str) -> list[float]:
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"scenario: '{where}' must be a list of numbers") from exc
    return out


def parse_scenario(path: str) -> Scenario:
    """Load and validate a scenario (or run manifest) JSON file."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"scenario: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"scenario: {path} is not valid JSON "
                              f"(line {exc.lineno}, column {exc.colno}: {exc.msg})") from exc
    if not isinstance(data, dict):
        raise ValidationError("scenario: top level must be a JSON object")
    if "scenario" in data and "particles" not in data:
        data = data["scenario"]            # accept a run manifest
    return scenario_from_dict(data)


def scenario_from_dict(data: dict) -> Scenario:
    """Build a validated Scenario from a parsed JSON object."""
    particles = _req(data, "particles", "")
    levels = [int(v) for v in _req(particles, "levels", "particles")]
    if len(levels) == 0 or any(m < 1 for m in levels):
        raise ValidationError("scenario: particles.levels must be positive counts")
    n = sum(levels)

    omegas = _floats(_req(data, "omega", ""), "omega")
    if len(omegas) != n:
        raise ValidationError(f"scenario: omega needs {n} entries (one per channel), got {len(omegas)}")

    bath = _req(data, "bath", "")
    eta_pi = _floats(_req(bath, "eta_over_pi", "bath"), "bath.eta_over_pi")
    t_corr = _req(bath, "t_corr", "bath")
    if len(t_corr) != len(levels):
        raise ValidationError("scenario: bath.t_corr needs one list per particle")
    for j, (row, m) in enumerate(zip(t_corr, levels)):
        if len(row) != m:
            raise ValidationError(f"scenario: bath.t_corr[{j}] needs {m} entries")
    model = GaussianBathModel(
        gamma=float(_req(bath, "gamma", "bath")),
        eta=tuple(v * math.pi for v in eta_pi),
        t_corr=tuple(tuple(float(v) for v in row) for row in t_corr),
        k0_rmin=float(_req(bath, "k0_rmin", "bath")),
        positions=tuple(_floats(_req(bath, "positions", "bath"), "bath.positions")),
        uncoupled_particles=bool(bath.get("uncoupled_particles", False)),
        psd=str(bath.get("psd", "warn")),
    )
    if model.levels_per_particle != tuple(levels):
        raise ValidationError("scenario: bath.t_corr level counts disagree with particles.levels")

    channels = tuple(Channel(particle=j, level=lvl, omega=omegas[i])
                     for i, (j, lvl) in enumerate(model.channel_layout()))

    time_sec = _req(data, "time", "")
    unit = str(time_sec.get("unit", "natural"))
    if unit not in ("natural", "inverse_ten_gamma"):
        raise ValidationError("scenario: time.unit must be 'natural' or 'inverse_ten_gamma'")
    scale = 1.0 if unit == "natural" else 1.0 / (10.0 * model.gamma) if model.gamma > 0 else 1.0
    horizon = float(_req(time_sec, "horizon", "time")) * scale
    output_step = float(_req(time_sec, "output_step", "time")) * scale
    if not (horizon > 0.0) or not (0.0 < output_step <= horizon):
        raise ValidationError("scenario: need horizon > 0 and 0 < output_step <= horizon")

    mod = _req(data, "modulation", "")
    mode = str(_req(mod, "mode", "modulation"))
    if mode == "none":
        sequence = PulseSequence.none(n)
    elif mode == "global":
        tau = float(_req(mod, "tau", "modulation")) * scale
        theta = float(_req(mod, "theta_over_pi", "modulation")) * math.pi
        sequence = PulseSequence.uniform(n, tau, theta)
    elif mode == "per_channel":
        taus = _floats(_req(mod, "tau", "modulation"), "modulation.tau")
        thetas = _floats(_req(mod, "theta_over_pi", "modulation"), "modulation.theta_over_pi")
        if len(taus) != n or len(thetas) != n:
            raise ValidationError(f"scenario: modulation lists need {n} entries")
        sequence = PulseSequence(tau=tuple(v * scale for v in taus),
                                 theta=tuple(v * math.pi for v in thetas))
    else:
        raise ValidationError("scenario: modulation.mode must be none, global, or per_channel")

    init = _req(data, "initial_state", "")
    if isinstance(init, str):
        if init not in _NAMED_STATES:
            raise ValidationError(f"scenario: initial_state must be one of {_NAMED_STATES} "
                                  "or an explicit amplitude object")
        initial = named_initial_state(init, channels)
        initial_name: str | None = init
    else:
        amps = _req(init, "amplitudes", "initial_state")
        if len(amps) != n:
            raise ValidationError(f"scenario: initial_state.amplitudes needs {n} [re, im] pairs")
        try:
            initial = np.array([complex(re, im) for re, im in amps])
        except (TypeError, ValueError) as exc:
            raise ValidationError("scenario: amplitudes must be [re, im] pairs") from exc
        if abs(float(np.sum(np.abs(initial) ** 2)) - 1.0) > 1e-9:
            raise ValidationError("scenario: explicit initial amplitudes must be normalized")
        initial_name = None

    quad = data.get("quadrature", {})
    allowed = {"rtol", "max_subdivisions", "window_multiplier", "steps_per_tau",
               "min_time_points", "grid_rtol", "max_grid_refinements"}
    bad = set(quad) - allowed
    if bad:
        raise ValidationError(f"scenario: unknown quadrature fields {sorted(bad)}")
    config = QuadratureConfig(**quad)

    sym = data.get("symmetry", {})
    opt = data.get("optimize", {})
    theta_bounds_pi = opt.get("theta_bounds_over_pi", (0.05 / math.pi, 1.9))
    scn = Scenario(
        model=model, channels=channels, sequence=sequence,
        initial_state=initial, initial_name=initial_name,
        horizon=horizon, output_step=output_step, time_unit=unit, config=config,
        symmetry_kind=str(sym.get("kind", "iip")),
        symmetry_threshold=float(sym.get("threshold", 0.05)),
        symmetry_samples=int(sym.get("samples", 64)),
        opt_free_tau=tuple(int(c) for c in opt.get("free_tau", range(n))),
        opt_free_theta=tuple(int(c) for c in opt.get("free_theta", range(n))),
        opt_weight=float(opt.get("weight", 1.0)),
        opt_budget=int(opt.get("budget", 200)),
        opt_tau_bounds=tuple(float(v) for v in opt.get("tau_bounds", (0.2, 2.5))),
        opt_theta_bounds=tuple(float(v) * math.pi for v in theta_bounds_pi),
        raw=serializable_dict(data),
    )
    if scn.symmetry_kind not in ("icp", "iip", "iit"):
        raise ValidationError("scenario: symmetry.kind must be icp, iip, or iit")
    return scn


def serializable_dict(data: dict) -> dict:
    """Round-trippable canonical copy (tuples -> lists, plain types only)."""
    return json.loads(json.dumps(data))


def serialize_scenario(scn: Scenario) -> dict:
    """Canonical JSON object; parse(serialize(s)) resolves to the same run.

    Times are written back in natural units (unit: natural) so the
    document is self-contained regardless of the input's unit choice.
    """
    model = scn.model
    init: str | dict
    if scn.initial_name is not None:
        init = scn.initial_name
    else:
        init = {"amplitudes": [[float(a.real), float(a.imag)] for a in scn.initial_state]}
    cfg = scn.config
    return {
        "particles": {"levels": list(model.levels_per_particle)},
        "omega": [ch.omega for ch in scn.channels],
        "bath": {
            "gamma": model.gamma,
            "eta_over_pi": [e / math.pi for e in model.eta],
            "t_corr": [list(row) for row in model.t_corr],
            "k0_rmin": model.k0_rmin,
            "positions": list(model.positions),
            "uncoupled_particles": model.uncoupled_particles,
            "psd": model.psd,
        },
        "modulation": {
            "mode": "per_channel",
            "tau": list(scn.sequence.tau),
            "theta_over_pi": [th / math.pi for th in scn.sequence.theta],
        },
        "initial_state": init,
        "time": {"horizon": scn.horizon, "output_step": scn.output_step, "unit": "natural"},
        "quadrature": {
            "rtol": cfg.rtol, "max_subdivisions": cfg.max_subdivisions,
            "window_multiplier": cfg.window_multiplier, "steps_per_tau": cfg.steps_per_tau,
            "min_time_points": cfg.min_time_points, "grid_rtol": cfg.grid_rtol,
            "max_grid_refinements": cfg.max_grid_refinements,
        },
        "symmetry": {"kind": scn.symmetry_kind, "threshold": scn.symmetry_threshold,
                     "samples": scn.symmetry_samples},
        "optimize": {
            "free_tau": list(scn.opt_free_tau), "free_theta": list(scn.opt_free_theta),
            "weight": scn.opt_weight, "budget": scn.opt_budget,
            "tau_bounds": list(scn.opt_tau_bounds),
            "theta_bounds_over_pi": [b / math.pi for b in scn.opt_theta_bounds],
        },
    }
