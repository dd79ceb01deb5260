"""Batched adaptive Gauss-Kronrod quadrature for oscillatory kernels.

The decoherence integrals need thousands of small oscillatory integrals
(one inner integral per output time, per channel pair).  Doing them one
scipy.integrate.quad call at a time wastes the vectorized integrand, so
this module evaluates whole batches of panels in single array calls:

  * every panel contributes 15 Kronrod nodes to one flat evaluation;
  * panels carry a group id (the output time they belong to) and
    convergence is judged per group, per integrand entry;
  * failing groups split their worst panels and only those re-evaluate.

The integrand receives the flat node array plus a per-node payload (the
group's parameter, e.g. the outer time) and returns one or more complex
entries per node, so N x N channel-pair matrices integrate in one pass.

Nodes and weights are the standard 7-15 Gauss-Kronrod pair; the error
estimate per panel is |Kronrod - Gauss|, conservative on smooth kernels.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalToleranceError

__all__ = ["adaptive_batch", "kronrod_nodes"]

# 7-15 Gauss-Kronrod abscissae and weights on [-1, 1], positive half.
_XGK_HALF = np.array([
    0.991455371120813, 0.949107912342759, 0.864864423359769,
    0.741531185599394, 0.586087235467691, 0.405845151377397,
    0.207784955007898, 0.0,
])
_WGK_HALF = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
])
_WG_HALF = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
])

_XGK = np.concatenate([-_XGK_HALF[:-1], _XGK_HALF[::-1]])            # 15 nodes ascending
_WGK = np.concatenate([_WGK_HALF[:-1], _WGK_HALF[::-1]])
_WG = np.zeros(15)
_WG[1:-1:2] = np.concatenate([_WG_HALF[:-1], _WG_HALF[::-1]])        # Gauss subset at odd indices


def kronrod_nodes() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The 15 Kronrod abscissae, Kronrod weights, embedded Gauss weights."""
    return _XGK.copy(), _WGK.copy(), _WG.copy()


def _evaluate(f, lo, hi, payload):
    """Kronrod value and |K - G| error for each panel, one flat call to f."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _XGK[None, :]                 # (P, 15)
    pay = np.repeat(payload, 15)
    vals = np.asarray(f(x.ravel(), pay))
    if vals.ndim == 1:
        vals = vals[:, None]
    vals = vals.reshape(len(lo), 15, -1)                             # (P, 15, E)
    kron = half[:, None] * np.einsum("k,pke->pe", _WGK, vals)
    gauss = half[:, None] * np.einsum("k,pke->pe", _WG, vals)
    return kron, np.abs(kron - gauss)


def adaptive_batch(f, lo, hi, gid, payload, n_groups: int,
                   rtol: float = 1e-8, atol: float = 0.0,
                   max_subdivisions: int = 256) -> np.ndarray:
    """Integrate f over grouped panels until every group meets tolerance.

    Parameters
    ----------
    f : callable
        f(x, payload) with x flat nodes, payload the per-node group
        parameter; returns (len(x),) or (len(x), E) complex values.
    lo, hi : arrays (P,)
        Initial panel bounds.
    gid : int array (P,)
        Group index of each panel in [0, n_groups).
    payload : array (P,)
        Parameter forwarded to f per panel (e.g. the outer time).
    n_groups : int
        Number of groups; the result has this many rows.
    rtol, atol : float
        Per-group, per-entry convergence: err <= rtol * |integral| + atol.
    max_subdivisions : int
        Bisection budget per group before giving up.

    Returns
    -------
    (n_groups, E) complex integrals.

    Raises
    ------
    NumericalToleranceError
        If a group exhausts its budget; the message carries the worst
        group, entry, and achieved error.
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    gid = np.asarray(gid, dtype=int).copy()
    payload = np.asarray(payload, dtype=float).copy()
    if not (len(lo) == len(hi) == len(gid) == len(payload)):
        raise ValueError("panel arrays must have equal length")
    vals, errs = _evaluate(f, lo, hi, payload)
    n_entries = vals.shape[1]
    splits = np.zeros(n_groups, dtype=int)

    while True:
        totals = np.zeros((n_groups, n_entries), dtype=complex)
        gerr = np.zeros((n_groups, n_entries), dtype=float)
        np.add.at(totals, gid, vals)
        np.add.at(gerr, gid, errs)
        bound = rtol * np.abs(totals) + atol
        failing = np.any(gerr > bound, axis=1)
        if not failing.any():
            return totals
        over = failing & (splits >= max_subdivisions)
        if over.any():
            g = int(np.argmax(np.where(over, gerr.max(axis=1), -1.0)))
            e = int(np.argmax(gerr[g]))
            rel = gerr[g, e] / max(abs(totals[g, e]), 1e-300)
            raise NumericalToleranceError(
                f"quadrature did not converge: group {g}, entry {e}, "
                f"error {gerr[g, e]:.3e} (relative {rel:.3e}) after {max_subdivisions} subdivisions")

        # split the worst panel of each failing group plus any panel within
        # 4x of it; panels below 1e-14 of their group span cannot be split
        perr = errs.max(axis=1)
        gmax = np.zeros(n_groups)
        np.maximum.at(gmax, gid, perr)
        wide = (hi - lo) > 1e-14 * (np.abs(hi) + np.abs(lo) + 1.0)
        mask = failing[gid] & (perr >= 0.25 * gmax[gid]) & (perr > 0.0) & wide
        if not mask.any():
            g = int(np.argmax(np.where(failing, gerr.max(axis=1), -1.0)))
            raise NumericalToleranceError(
                f"quadrature stalled: group {g} cannot be refined further "
                f"(panels at width limit with error {gerr[g].max():.3e})")
        splits += np.bincount(gid[mask], minlength=n_groups)

        mid = 0.5 * (lo[mask] + hi[mask])
        new_lo = np.concatenate([lo[mask], mid])
        new_hi = np.concatenate([mid, hi[mask]])
        new_gid = np.concatenate([gid[mask], gid[mask]])
        new_pay = np.concatenate([payload[mask], payload[mask]])
        new_vals, new_errs = _evaluate(f, new_lo, new_hi, new_pay)

        keep = ~mask
        lo = np.concatenate([lo[keep], new_lo])
        hi = np.concatenate([hi[keep], new_hi])
        gid = np.concatenate([gid[keep], new_gid])
        payload = np.concatenate([payload[keep], new_pay])
        vals = np.concatenate([vals[keep], new_vals])
        errs = np.concatenate([errs[keep], new_errs])
