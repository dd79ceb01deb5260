"""Symmetry diagnostics for J(t) and derivative-free pulse-parameter search.

Three target structures make entangled states robust:

ICP  every entry of J equals a single scalar r(t); the singlet-type
     combinations then live in the kernel (full decoherence-free
     subspace).  Requires all pairs coupled identically: N(N-1)/2
     conditions against N modulation controls, so it is generically
     infeasible for N > 2.
IIP  J = r(t) * Identity: every channel decays identically and
     independently, which preserves correlations (F_c = 1) though not
     population.
IIT  J block-diagonal with each particle block uniform, J_block = r_j(t)
     * all-ones; each particle's antisymmetric two-level superposition
     is then trapped.

Deviations are max-norm over sampled times and normalized by the final
||J(T)|| so thresholds transfer across coupling strengths; they act on
the Hermitian part of J, the decoherence content proper.  The pulse
search is derivative-free (the objective has kinks where pulse counts
change): coordinate descent on log-spaced grids, then simplex
refinement, deterministic for a fixed seed.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .bath import BathModel, Channel, particle_blocks
from .decoherence import DecoherenceTrajectory, QuadratureConfig, decoherence_matrix
from .dynamics import fidelity_report, named_initial_state, propagate
from .errors import ApplicabilityError, ValidationError
from .modulation import PulseSequence

__all__ = [
    "SymmetryTarget",
    "DeviationReport",
    "OptimizationProblem",
    "OptimizationResult",
    "ICPFeasibilityReport",
    "symmetry_deviation",
    "cross_suppression",
    "icp_feasibility",
    "optimize_pulses",
]

_KINDS = ("icp", "iip", "iit")


@dataclass(frozen=True)
class SymmetryTarget:
    """Which J structure to test for, over [0, horizon] at `samples` times."""

    kind: str
    horizon: float
    samples: int = 64

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValidationError(f"symmetry kind must be one of {_KINDS}, got {self.kind!r}")
        if not (self.horizon > 0.0) or not math.isfinite(self.horizon):
            raise ValidationError("symmetry horizon must be positive and finite")
        if self.samples < 2:
            raise ValidationError("symmetry needs at least 2 sample times")


@dataclass(frozen=True)
class DeviationReport:
    """Normalized deviation of J(t) from a target symmetry.

    deviation is the scalar max over sampled times; the per-time arrays
    break it down into cross-block, diagonal-spread, and intra-block
    contributions (zero where a component does not apply to the kind).
    All values are divided by normalization = max(||J(T)||, 1e-12).
    """

    kind: str
    deviation: float
    sample_times: np.ndarray
    cross_block: np.ndarray
    diagonal_spread: np.ndarray
    intra_block_spread: np.ndarray
    normalization: float

    def __post_init__(self) -> None:
        if self.deviation < 0.0:
            raise ValidationError("deviation must be nonnegative")

    def per_time_total(self) -> np.ndarray:
        """Combined per-time deviation; its max is the scalar deviation."""
        if self.kind == "icp":
            return np.maximum(np.maximum(self.cross_block, self.diagonal_spread),
                              self.intra_block_spread)
        return self.cross_block + self.diagonal_spread + self.intra_block_spread


def _sample_indices(times: np.ndarray, horizon: float, samples: int) -> np.ndarray:
    inside = np.nonzero(times <= horizon * (1.0 + 1e-12))[0]
    if len(inside) == 0:
        raise ValidationError("trajectory does not cover the symmetry horizon")
    return np.unique(np.linspace(0, inside[-1], min(samples, len(inside))).astype(int))


def symmetry_deviation(trajectory: DecoherenceTrajectory, target: SymmetryTarget) -> DeviationReport:
    """Measure how far the trajectory's J(t) is from the target structure.

    ICP: max entry deviation from the mean entry.  IIP: max off-diagonal
    magnitude plus max diagonal deviation from the diagonal mean.  IIT:
    max cross-particle magnitude plus the worst within-block deviation
    from each particle block's mean.  Max over sampled times, normalized
    by ||J(T)||.  All measured on the Hermitian part of J, the
    decoherence content that the symmetries constrain; anti-Hermitian
    level shifts do not enter.
    """
    blocks = particle_blocks(trajectory.channels)
    if target.kind == "iit" and any(len(ix) < 2 for ix in blocks.values()):
        raise ApplicabilityError("IIT requires at least two levels on every particle")

    idx = _sample_indices(trajectory.time_grid, target.horizon, target.samples)
    js = trajectory.integrated[idx]
    js = 0.5 * (js + np.conj(js.swapaxes(-2, -1)))
    n = js.shape[1]
    norm = max(float(np.max(np.abs(js[-1]))), 1e-12)

    same_block = np.zeros((n, n), dtype=bool)
    for ix in blocks.values():
        same_block[np.ix_(ix, ix)] = True
    off_diag = ~np.eye(n, dtype=bool)
    cross_mask = ~same_block
    intra_off = same_block & off_diag

    m = len(idx)
    cross = np.zeros(m)
    diag_spread = np.zeros(m)
    intra = np.zeros(m)

    for k, j in enumerate(js):
        if target.kind == "icp":
            dev = np.abs(j - np.mean(j))
            cross[k] = dev[cross_mask].max() if cross_mask.any() else 0.0
            diag_spread[k] = np.abs(np.diagonal(j) - np.mean(j)).max()
            intra[k] = dev[intra_off].max() if intra_off.any() else 0.0
        elif target.kind == "iip":
            cross[k] = np.abs(j[off_diag]).max() if n > 1 else 0.0
            diag_spread[k] = np.abs(np.diagonal(j) - np.mean(np.diagonal(j))).max()
        else:  # iit
            cross[k] = np.abs(j[cross_mask]).max() if cross_mask.any() else 0.0
            worst = 0.0
            for ix in blocks.values():
                block = j[np.ix_(ix, ix)]
                worst = max(worst, float(np.abs(block - np.mean(block)).max()))
            intra[k] = worst

    cross /= norm
    diag_spread /= norm
    intra /= norm
    if target.kind == "icp":
        per_time = np.maximum(np.maximum(cross, diag_spread), intra)
    else:
        per_time = cross + diag_spread + intra
    return DeviationReport(kind=target.kind, deviation=float(per_time.max()),
                           sample_times=trajectory.time_grid[idx].copy(),
                           cross_block=cross, diagonal_spread=diag_spread,
                           intra_block_spread=intra, normalization=norm)


def cross_suppression(trajectory: DecoherenceTrajectory) -> float:
    """max cross-particle |J_pq(T)| over min diagonal |J_pp(T)|.

    Near 1 when shifted resonances coincide (rows identical), falling
    toward 0 as the shift separation exceeds the bath spectral width.
    Measured on the Hermitian part of J(T), the part the shifted
    spectral overlap controls.  Returns 0.0 when all cross terms vanish
    exactly, NaN when J(T) is degenerate (zero diagonal) so no ratio is
    defined.
    """
    j = trajectory.final()
    j = 0.5 * (j + np.conj(j.T))
    blocks = particle_blocks(trajectory.channels)
    n = j.shape[0]
    same = np.zeros((n, n), dtype=bool)
    for ix in blocks.values():
        same[np.ix_(ix, ix)] = True
    cross_mask = ~same
    cross = float(np.abs(j[cross_mask]).max()) if cross_mask.any() else 0.0
    if cross == 0.0:
        return 0.0
    min_diag = float(np.abs(np.diagonal(j)).min())
    if min_diag <= 1e-300:
        return math.nan
    return cross / min_diag


@dataclass(frozen=True)
class ICPFeasibilityReport:
    """Counting argument and coupling check for the ICP symmetry."""

    conditions: int            # N(N-1)/2 pair conditions
    controls: int              # N modulation controls
    feasible_countwise: bool
    vanishing_pairs: tuple[tuple[int, int], ...]
    possible: bool             # False when some pair is uncoupled


def icp_feasibility(model: BathModel) -> ICPFeasibilityReport:
    """Advisory ICP check: condition count vs controls, uncoupled pairs.

    Equalizing all pairs imposes N(N-1)/2 conditions on N per-channel
    modulations, and fails outright when any cross coupling vanishes.
    """
    n = model.n_channels
    phi0 = np.abs(model.spectrum().phi0)
    vanishing = tuple((p, q) for p in range(n) for q in range(p + 1, n) if phi0[p, q] == 0.0)
    conditions = n * (n - 1) // 2
    return ICPFeasibilityReport(conditions=conditions, controls=n,
                                feasible_countwise=conditions <= n,
                                vanishing_pairs=vanishing,
                                possible=len(vanishing) == 0)


@dataclass(frozen=True)
class OptimizationProblem:
    """Search space and objective for pulse-parameter optimization.

    free_tau / free_theta list the channel indices whose period / kick
    angle may vary; the rest stay at the base sequence's values.  The
    objective is deviation(target) + weight * (1 - F(horizon)).
    """

    target: SymmetryTarget
    free_tau: tuple[int, ...]
    free_theta: tuple[int, ...]
    tau_bounds: tuple[float, float] = (0.2, 2.5)
    theta_bounds: tuple[float, float] = (0.05, 1.9 * math.pi)
    weight: float = 1.0
    budget: int = 200

    def __post_init__(self) -> None:
        lo, hi = self.tau_bounds
        if not (0.0 < lo < hi) or not math.isfinite(hi):
            raise ValidationError("tau bounds must satisfy 0 < lo < hi")
        tlo, thi = self.theta_bounds
        if not (0.0 <= tlo < thi) or thi >= 2.0 * math.pi:
            raise ValidationError("theta bounds must satisfy 0 <= lo < hi < 2*pi (magnitudes)")
        if self.weight < 0.0:
            raise ValidationError("objective weight must be >= 0")
        if self.budget < 50:
            raise ValidationError("optimization budget must be at least 50 evaluations")
        n_free = len(self.free_tau) + len(self.free_theta)
        if n_free == 0:
            raise ValidationError("at least one free parameter is required")


@dataclass(frozen=True)
class OptimizationResult:
    """Best sequence found plus the full evaluation trace.

    trace rows are (evaluation index, objective, best so far); the
    best-so-far column is nonincreasing.  improved is False when the
    budget ran out without beating the initial point, in which case
    sequence is the initial sequence.
    """

    sequence: PulseSequence
    objective: float
    initial_objective: float
    improved: bool
    evaluations: int
    trace: np.ndarray
    report: DeviationReport
    fidelity: float


def _n_threads() -> int:
    raw = os.environ.get("SIMSHIELD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _heuristic_initial(model: BathModel, seq: PulseSequence, problem: OptimizationProblem,
                       channels: tuple[Channel, ...], rng: np.random.Generator) -> PulseSequence:
    """Faster-decaying channels get smaller tau and larger |theta|.

    The unmodulated asymptotic decay rate pi*G_pp(omega_p) ranks the
    channels; ranks map linearly into the bounds with a small seeded
    jitter so distinct seeds explore distinct basins.
    """
    spectrum = model.spectrum()
    omegas = np.array([ch.omega for ch in channels])
    rates = np.array([float(np.pi * spectrum.evaluate(w)[p, p]) for p, w in enumerate(omegas)])
    order = np.argsort(np.argsort(-rates))          # 0 = fastest decaying
    n = len(channels)
    frac = order / max(n - 1, 1)
    t_lo, t_hi = problem.tau_bounds
    h_lo, h_hi = problem.theta_bounds
    taus = list(seq.tau)
    thetas = list(seq.theta)
    jit = rng.uniform(0.95, 1.05, size=2 * n)
    for c in problem.free_tau:
        span = (t_hi / t_lo) ** 0.5
        taus[c] = float(np.clip(math.sqrt(t_lo * t_hi) * span ** (frac[c] - 0.5) * jit[c], t_lo, t_hi))
    for c in problem.free_theta:
        target = h_lo + (h_hi - h_lo) * (1.0 - 0.5 * frac[c])
        thetas[c] = float(np.clip(target * jit[n + c], h_lo, h_hi))
    return PulseSequence(tau=tuple(taus), theta=tuple(thetas))


def _pack(seq: PulseSequence, problem: OptimizationProblem) -> np.ndarray:
    vals = [seq.tau[c] for c in problem.free_tau]
    vals += [seq.theta[c] for c in problem.free_theta]
    return np.array(vals, dtype=float)


def _unpack(x: np.ndarray, base: PulseSequence, problem: OptimizationProblem) -> PulseSequence:
    taus = list(base.tau)
    thetas = list(base.theta)
    k = 0
    t_lo, t_hi = problem.tau_bounds
    h_lo, h_hi = problem.theta_bounds
    for c in problem.free_tau:
        taus[c] = float(np.clip(x[k], t_lo, t_hi))
        k += 1
    for c in problem.free_theta:
        mag = float(np.clip(abs(x[k]), h_lo, h_hi))
        thetas[c] = math.copysign(mag, x[k]) if x[k] != 0.0 else mag
        k += 1
    return PulseSequence(tau=tuple(taus), theta=tuple(thetas))


def optimize_pulses(problem: OptimizationProblem, model: BathModel,
                    channels: tuple[Channel, ...], base: PulseSequence | None = None,
                    alpha0=None, seed: int = 0,
                    config: QuadratureConfig | None = None) -> OptimizationResult:
    """Minimize symmetry deviation (plus weighted infidelity) over pulses.

    Derivative-free: the heuristic initial point, two coordinate-descent
    sweeps over log-spaced grids, then Nelder-Mead refinement with the
    remaining budget.  Deterministic for fixed (seed, budget); candidate
    batches may evaluate in parallel (SIMSHIELD_THREADS) without
    affecting the outcome since the reduction keeps candidate order and
    ties prefer the lexicographically smaller parameter vector.
    """
    n = len(channels)
    if base is None:
        base = PulseSequence.none(n)
    if base.n_channels != n:
        raise ValidationError("base sequence channel count mismatch")
    bad = [c for c in (*problem.free_tau, *problem.free_theta) if not 0 <= c < n]
    if bad:
        raise ValidationError(f"free parameter channel indices out of range: {bad}")
    if problem.weight > 0.0 and alpha0 is None:
        blocks = particle_blocks(channels)
        if all(len(ix) == 2 for ix in blocks.values()):
            alpha0 = named_initial_state("dark_mes", channels)
        else:
            alpha0 = np.ones(n, dtype=complex) / math.sqrt(n)

    rng = np.random.default_rng(seed)
    cfg = config if config is not None else QuadratureConfig()
    horizon = problem.target.horizon
    trace_rows: list[tuple[int, float, float]] = []
    cache: dict[tuple, tuple[float, float]] = {}

    def raw_eval(seq: PulseSequence) -> tuple[float, float]:
        key = (seq.tau, seq.theta)
        if key in cache:
            return cache[key]
        traj = decoherence_matrix(model, seq, channels, horizon=horizon, config=cfg)
        dev = symmetry_deviation(traj, problem.target).deviation
        fid = math.nan
        obj = dev
        if problem.weight > 0.0:
            amps = propagate(traj, alpha0)
            fid = float(fidelity_report(amps).F[-1])
            obj = dev + problem.weight * (1.0 - fid)
        cache[key] = (obj, fid)
        return obj, fid

    best = {"obj": math.inf, "seq": None, "fid": math.nan, "x": None}

    def record(seq: PulseSequence, obj: float, fid: float) -> None:
        x = _pack(seq, problem)
        better = obj < best["obj"] or (obj == best["obj"] and best["x"] is not None
                                       and tuple(x) < tuple(best["x"]))
        if better:
            best.update(obj=obj, seq=seq, fid=fid, x=x)
        trace_rows.append((len(trace_rows), obj, best["obj"]))

    def evaluate(candidates: list[PulseSequence]) -> bool:
        """Evaluate in order; True when the budget is exhausted."""
        room = problem.budget - len(trace_rows)
        candidates = candidates[:room]
        threads = _n_threads()
        if threads > 1 and len(candidates) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                results = list(ex.map(raw_eval, candidates))
        else:
            results = [raw_eval(c) for c in candidates]
        for seq, (obj, fid) in zip(candidates, results):
            record(seq, obj, fid)
        return len(trace_rows) >= problem.budget

    init_seq = _heuristic_initial(model, base, problem, channels, rng)
    evaluate([init_seq])
    initial_obj = trace_rows[0][1]

    done = initial_obj <= 1e-15
    if not done:
        # coordinate descent, two sweeps, log-spaced grids
        t_lo, t_hi = problem.tau_bounds
        h_lo, h_hi = problem.theta_bounds
        for _ in range(2):
            if done:
                break
            for c in problem.free_tau:
                grid = np.geomspace(t_lo, t_hi, 7)
                cands = [replace_channel(best["seq"], c, tau=g) for g in grid]
                if evaluate(cands):
                    done = True
                    break
            for c in problem.free_theta:
                if done:
                    break
                grid = np.geomspace(max(h_lo, 5e-2), h_hi, 7)
                cands = [replace_channel(best["seq"], c, theta=g) for g in grid]
                if evaluate(cands):
                    done = True
                    break

    remaining = problem.budget - len(trace_rows)
    if not done and remaining > 2:
        x0 = _pack(best["seq"], problem)
        lo = [problem.tau_bounds[0]] * len(problem.free_tau) + \
             [problem.theta_bounds[0]] * len(problem.free_theta)
        hi = [problem.tau_bounds[1]] * len(problem.free_tau) + \
             [problem.theta_bounds[1]] * len(problem.free_theta)

        def fun(x):
            if len(trace_rows) >= problem.budget:
                return best["obj"]
            seq = _unpack(x, best["seq"], problem)
            obj, fid = raw_eval(seq)
            record(seq, obj, fid)
            return obj

        minimize(fun, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                 options={"maxfev": remaining, "xatol": 1e-4, "fatol": 1e-10,
                          "disp": False})

    improved = best["obj"] < initial_obj or initial_obj <= 1e-15
    final_seq = best["seq"] if improved else init_seq
    final_obj = best["obj"] if improved else initial_obj
    traj = decoherence_matrix(model, final_seq, channels, horizon=horizon, config=cfg)
    report = symmetry_deviation(traj, problem.target)
    fid = cache[(final_seq.tau, final_seq.theta)][1]
    return OptimizationResult(sequence=final_seq, objective=float(final_obj),
                              initial_objective=float(initial_obj), improved=improved,
                              evaluations=len(trace_rows),
                              trace=np.array(trace_rows, dtype=float),
                              report=report, fidelity=float(fid))


def replace_channel(seq: PulseSequence, channel: int, tau: float | None = None,
                    theta: float | None = None) -> PulseSequence:
    """Copy of seq with one channel's tau and/or theta replaced."""
    taus = list(seq.tau)
    thetas = list(seq.theta)
    if tau is not None:
        taus[channel] = float(tau)
    if theta is not None:
        thetas[channel] = float(theta)
    return PulseSequence(tau=tuple(taus), theta=tuple(thetas))
