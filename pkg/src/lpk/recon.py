"""Recovering missing Fourier samples from linear-prediction structure.

Two complementary routes:

* Lift the samples into a window-structured matrix whose rank deficiency
  encodes the prediction relations, alternate between rank truncation and
  data consistency (``lowrank_complete``).
* Fix a bank of annihilating filters and solve the quadratic problem
  "acquired samples stay put, total filter response energy is minimal"
  by conjugate gradients (``annihilation_recon``).

Both come back with a :class:`ReconReport` describing what the solver
did.  Conjugate-symmetry tricks (virtual conjugate channels, the
symmetric lifting variant) let the same machinery fill one-sided partial
coverage (``pf_recon``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal

from .core import (
    GridMismatchError,
    KGrid,
    KSignal,
    MultiKSignal,
    SamplingMask,
)
from .lp import FilterBank, build_calib_matrix, nullspace_filter_bank, _as_multi


@dataclass(frozen=True)
class ReconReport:
    """What a reconstruction run did and how it went."""

    method: str
    iterations: int
    converged: bool
    objective_trace: tuple[float, ...] = ()
    rank: int | None = None
    spectrum_head: tuple[float, ...] = ()
    degenerate: bool = False
    conditioning: float | None = None
    notes: tuple[str, ...] = ()


def report_to_json(report: ReconReport) -> dict:
    return {
        "version": 1,
        "kind": "reconreport",
        "method": report.method,
        "iterations": report.iterations,
        "converged": report.converged,
        "objective_trace": list(report.objective_trace),
        "rank": report.rank,
        "spectrum_head": list(report.spectrum_head),
        "degenerate": report.degenerate,
        "conditioning": report.conditioning,
        "notes": list(report.notes),
    }


def report_from_json(doc: dict) -> ReconReport:
    return ReconReport(
        method=doc["method"],
        iterations=int(doc["iterations"]),
        converged=bool(doc["converged"]),
        objective_trace=tuple(float(v) for v in doc["objective_trace"]),
        rank=None if doc.get("rank") is None else int(doc["rank"]),
        spectrum_head=tuple(float(v) for v in doc.get("spectrum_head", ())),
        degenerate=bool(doc.get("degenerate", False)),
        conditioning=None if doc.get("conditioning") is None else float(doc["conditioning"]),
        notes=tuple(doc.get("notes", ())),
    )


def _reflect_values(arr: np.ndarray, grid: KGrid, fill=0):
    """out[n] = arr[-n] where -n lies in the grid, else fill."""
    out = np.full_like(arr, fill)
    src = []
    dst = []
    for lo, hi in zip(grid.n_min, grid.n_max):
        n = np.arange(lo, hi + 1)
        ok = (-n >= lo) & (-n <= hi)
        dst.append(np.flatnonzero(ok))
        src.append((-n[ok]) - lo)
    dst_ix = np.ix_(*dst)
    src_ix = np.ix_(*src)
    out[dst_ix] = arr[src_ix]
    return out


def unpaired_positions(grid: KGrid) -> np.ndarray:
    """Boolean array marking indices n whose mirror -n falls off the grid."""
    marks = np.zeros(grid.shape, dtype=bool)
    for ax, (lo, hi) in enumerate(zip(grid.n_min, grid.n_max)):
        n = np.arange(lo, hi + 1)
        bad = (-n < lo) | (-n > hi)
        shape = [1] * grid.dims
        shape[ax] = len(n)
        marks |= bad.reshape(shape)
    return marks


def virtual_conjugate(data) -> MultiKSignal:
    """Append the conjugate-mirrored copy of every channel.

    The mirror of channel ``q`` holds ``conj(x_q[-n])``; if an object has
    slowly varying phase those channels obey the same prediction
    relations as the originals and double the usable equations.  Indices
    whose mirror falls outside the grid are zero-filled with a warning.
    """
    ms = _as_multi(data)
    if np.any(unpaired_positions(ms.grid)):
        warnings.warn(
            "grid is asymmetric; unpaired edge indices of the conjugate copy are zero-filled",
            stacklevel=2,
        )
    mirrored = [
        KSignal(ms.grid, _reflect_values(np.conj(s.values), ms.grid))
        for s in ms.channels
    ]
    return MultiKSignal(tuple(ms.channels) + tuple(mirrored))


def reflect_mask(mask: SamplingMask) -> SamplingMask:
    """Mask of the conjugate-mirrored copy: acquired at n iff -n was acquired."""
    acq = _reflect_values(mask.acquired, mask.grid, fill=False)
    calib = None
    if mask.calib is not None:
        refl = tuple(
            (max(-hi, lo_g), min(-lo, hi_g))
            for (lo, hi), lo_g, hi_g in zip(mask.calib, mask.grid.n_min, mask.grid.n_max)
        )
        if all(lo <= hi for lo, hi in refl):
            sl = tuple(slice(lo - g, hi - g + 1) for (lo, hi), g in zip(refl, mask.grid.n_min))
            if bool(np.all(acq[sl])):
                calib = refl
    return SamplingMask(mask.grid, acq, calib)


@dataclass(frozen=True, eq=False)
class StructuredMatrix:
    """Window-lifted matrix of a (possibly conjugate-augmented) signal set."""

    matrix: np.ndarray
    grid: KGrid
    L: int
    P: int
    q_count: int
    variant: str

    @property
    def taps_per_channel(self) -> int:
        return (self.L + self.P + 1) ** self.grid.dims

    def unlift(self) -> MultiKSignal:
        """Average every matrix cell back onto the sample it was read from.

        Exact inverse of :func:`lift` up to floating-point averaging; for
        the symmetric variant mirrored cells contribute through their
        conjugate at the reflected index.
        """
        blocks = 2 * self.q_count if self.variant == "S" else self.q_count
        acc = np.zeros((blocks,) + self.grid.shape, dtype=np.complex128)
        count = np.zeros(self.grid.shape, dtype=np.float64)
        valid = self.grid.valid_for(self.L, self.P)
        vshape = valid.shape
        width = self.L + self.P + 1
        ks = np.stack(
            np.meshgrid(*[np.arange(-self.L, self.P + 1)] * self.grid.dims, indexing="ij"),
            -1,
        ).reshape(-1, self.grid.dims)
        for j, k in enumerate(ks):
            sl = tuple(
                slice(vlo - ki - glo, vhi - ki - glo + 1)
                for vlo, vhi, ki, glo in zip(valid.n_min, valid.n_max, k, self.grid.n_min)
            )
            for q in range(blocks):
                acc[q][sl] += self.matrix[:, q * self.taps_per_channel + j].reshape(vshape)
            count[sl] += 1.0
        if self.variant == "C":
            vals = acc / count
            return MultiKSignal.from_array(self.grid, vals)
        count_refl = _reflect_values(count, self.grid, fill=0.0)
        out = np.empty((self.q_count,) + self.grid.shape, dtype=np.complex128)
        for q in range(self.q_count):
            mirrored = _reflect_values(np.conj(acc[self.q_count + q]), self.grid)
            out[q] = (acc[q] + mirrored) / (count + count_refl)
        return MultiKSignal.from_array(self.grid, out)


def lift(data, L: int, P: int, variant: str = "C") -> StructuredMatrix:
    """Arrange all prediction windows of the data as matrix rows.

    Row ``n`` (one per window position whose ``[n - P, n + L]`` block
    fits in the grid) holds ``x_q[n - k]`` across channel-major,
    ascending-``k`` columns; any filter annihilating the data is a
    nullspace vector of this matrix.  Variant ``"S"`` first appends the
    conjugate-mirrored channels so conjugate symmetry shows up as extra
    rank deficiency.
    """
    if variant not in ("C", "S"):
        raise ValueError("variant must be 'C' or 'S'")
    ms = _as_multi(data)
    if variant == "S":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            aug = virtual_conjugate(ms)
    else:
        aug = ms
    cm = build_calib_matrix(aug, None, L, P)
    return StructuredMatrix(cm.matrix, ms.grid, L, P, ms.q_count, variant)


def _norm_masks(mask, q_count: int, grid: KGrid) -> list[SamplingMask]:
    masks = [mask] * q_count if isinstance(mask, SamplingMask) else list(mask)
    if len(masks) != q_count:
        raise ValueError(f"expected {q_count} masks, got {len(masks)}")
    for m in masks:
        if m.grid != grid:
            raise GridMismatchError("mask grid differs from data grid")
    return masks


def lowrank_complete(
    data,
    mask,
    L: int = 2,
    P: int = 2,
    rank: int | None = None,
    tau: float = 0.05,
    variant: str = "C",
    tol: float = 1e-9,
    max_iters: int = 100,
) -> tuple[MultiKSignal, ReconReport]:
    """Fill missing samples by alternating rank truncation and consistency.

    Each sweep lifts the current estimate, truncates its singular values
    to ``rank`` (chosen on the first sweep as the count above ``tau``
    times the largest when not given), averages the matrix back to
    samples, and restores the acquired values.  Stops when the relative
    update falls below ``tol``.

    Returns:
        ``(completed, report)``; the report carries the final leading
        spectrum, and its ``degenerate`` flag is set when the spectrum
        shows no clear gap at the chosen rank.
    """
    ms = _as_multi(data)
    masks = _norm_masks(mask, ms.q_count, ms.grid)
    acq = [m.acquired for m in masks]
    ref = ms.stack()
    x = np.array([np.where(a, r, 0.0) for a, r in zip(acq, ref)])
    trace = []
    converged = False
    chosen = rank
    s_final = np.zeros(0)
    it = 0
    for it in range(1, max_iters + 1):
        lifted = lift(MultiKSignal.from_array(ms.grid, x), L, P, variant)
        u, s, vh = np.linalg.svd(lifted.matrix, full_matrices=False)
        if chosen is None:
            chosen = max(1, int(np.sum(s > tau * s[0])))
            chosen = min(chosen, len(s))
        if not 1 <= chosen <= len(s):
            raise ValueError(f"rank must lie in [1, {len(s)}]")
        s_final = s
        trunc = (u[:, :chosen] * s[:chosen]) @ vh[:chosen]
        back = StructuredMatrix(trunc, ms.grid, L, P, ms.q_count, variant).unlift()
        x_new = back.stack()
        for q in range(ms.q_count):
            x_new[q][acq[q]] = ref[q][acq[q]]
        denom = max(float(np.linalg.norm(x)), np.finfo(float).tiny)
        change = float(np.linalg.norm(x_new - x)) / denom
        trace.append(change)
        x = x_new
        if change <= tol:
            converged = True
            break
    degenerate = bool(
        chosen < len(s_final) and s_final[chosen] > 0.999 * s_final[chosen - 1]
    )
    report = ReconReport(
        method=f"lowrank-{variant}",
        iterations=it,
        converged=converged,
        objective_trace=tuple(trace),
        rank=chosen,
        spectrum_head=tuple(float(v) for v in s_final[: min(32, len(s_final))]),
        degenerate=degenerate,
    )
    return MultiKSignal.from_array(ms.grid, x), report


def _conv_valid(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    return scipy.signal.convolve(arr, taps, mode="valid", method="direct")


def _corr_full(arr: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Adjoint of valid-mode convolution: full convolution with the
    conjugate-reversed taps."""
    rev = np.conj(taps[tuple(slice(None, None, -1) for _ in range(taps.ndim))])
    return scipy.signal.convolve(arr, rev, mode="full", method="direct")


def _bank_forward(x: np.ndarray, bank: FilterBank) -> list[np.ndarray]:
    """Per-filter joint responses of the stacked signal array."""
    out = []
    for mf in bank.filters:
        resp = None
        for q, f in enumerate(mf.filters):
            r = _conv_valid(x[q], f.taps)
            resp = r if resp is None else resp + r
        out.append(resp)
    return out


def _bank_adjoint(resps: Sequence[np.ndarray], bank: FilterBank, shape) -> np.ndarray:
    grad = np.zeros(shape, dtype=np.complex128)
    for mf, r in zip(bank.filters, resps):
        for q, f in enumerate(mf.filters):
            grad[q] += _corr_full(r, f.taps)
    return grad


def _cg(apply_a, b: np.ndarray, tol: float, max_iters: int):
    """Conjugate gradients on a Hermitian PSD system.

    Returns ``(x, iterations, converged, alphas, betas, step_drops)``
    where ``step_drops[j] = alpha_j * ||r_j||^2`` is the exact decrease
    of the quadratic objective at step ``j``.
    """
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.real(np.vdot(r, r)))
    b_norm = np.sqrt(rs)
    alphas: list[float] = []
    betas: list[float] = []
    drops: list[float] = []
    if b_norm == 0.0:
        return x, 0, True, alphas, betas, drops
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        ap = apply_a(p)
        pap = float(np.real(np.vdot(p, ap)))
        if pap <= 0.0:
            it -= 1
            break
        alpha = rs / pap
        x += alpha * p
        r -= alpha * ap
        drops.append(alpha * rs)
        rs_new = float(np.real(np.vdot(r, r)))
        beta = rs_new / rs
        alphas.append(alpha)
        betas.append(beta)
        rs = rs_new
        if np.sqrt(rs) <= tol * b_norm:
            converged = True
            break
        p = r + beta * p
    return x, it, converged, alphas, betas, drops


def _ritz_conditioning(alphas: Sequence[float], betas: Sequence[float]) -> float | None:
    """Condition estimate from the tridiagonal system CG built implicitly."""
    m = len(alphas)
    if m == 0:
        return None
    diag = np.empty(m)
    off = np.empty(max(m - 1, 0))
    for j in range(m):
        diag[j] = 1.0 / alphas[j] + (betas[j - 1] / alphas[j - 1] if j > 0 else 0.0)
        if j < m - 1:
            off[j] = np.sqrt(betas[j]) / alphas[j]
    vals = scipy.linalg.eigvalsh_tridiagonal(diag, off) if m > 1 else diag
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if lo <= 0:
        return None
    return hi / lo


def annihilation_recon(
    data,
    mask,
    bank: FilterBank,
    lam: float = 0.0,
    tol: float = 1e-9,
    max_iters: int = 500,
) -> tuple[MultiKSignal, ReconReport]:
    """Recover missing samples by minimizing bank response energy.

    With ``lam == 0`` the acquired samples are hard constraints and the
    solver runs conjugate gradients over the missing entries alone, so
    the recorded objective (total squared response) decreases
    monotonically.  With ``lam > 0`` all samples relax and the objective
    becomes ``||x - y||^2`` on acquired entries plus ``lam`` times the
    response energy.

    Args:
        data: measured samples (values at missing positions ignored).
        mask: one mask shared by all channels, or one per channel.
        bank: annihilating filters, channel count matching the data.

    Returns:
        ``(recovered, report)``; the report includes a spectral
        condition estimate of the normal system from the CG recursion.
    """
    ms = _as_multi(data)
    if bank.q_count != ms.q_count:
        raise ValueError(
            f"bank has {bank.q_count} channels, data has {ms.q_count}"
        )
    masks = _norm_masks(mask, ms.q_count, ms.grid)
    ms.grid.valid_for(bank.L, bank.P)
    acq = np.array([m.acquired for m in masks])
    ref = ms.stack()
    base = np.where(acq, ref, 0.0)
    shape = base.shape

    if lam < 0:
        raise ValueError("lam must be nonnegative")

    if lam == 0.0:
        miss = ~acq

        def scatter(vec):
            x = base.copy()
            x[miss] = vec
            return x

        def apply_a(vec):
            x = np.zeros(shape, dtype=np.complex128)
            x[miss] = vec
            resps = _bank_forward(x, bank)
            return _bank_adjoint(resps, bank, shape)[miss]

        resps0 = _bank_forward(base, bank)
        f0 = float(sum(np.sum(np.abs(r) ** 2) for r in resps0))
        b = -_bank_adjoint(resps0, bank, shape)[miss]
        sol, iters, converged, alphas, betas, drops = _cg(apply_a, b, tol, max_iters)
        x = scatter(sol)
        trace = [f0]
        for d in drops:
            trace.append(trace[-1] - d)
        method = "annihilation-hard"
    else:

        def apply_a(vec):
            x = vec.reshape(shape)
            resps = _bank_forward(x, bank)
            out = np.where(acq, x, 0.0) + lam * _bank_adjoint(resps, bank, shape)
            return out.reshape(-1)

        f0 = float(np.sum(np.abs(base[acq]) ** 2))
        sol, iters, converged, alphas, betas, drops = _cg(
            apply_a, base.reshape(-1), tol, max_iters
        )
        x = sol.reshape(shape)
        trace = [f0]
        for d in drops:
            trace.append(trace[-1] - d)
        method = "annihilation-soft"

    report = ReconReport(
        method=method,
        iterations=iters,
        converged=converged,
        objective_trace=tuple(trace),
        conditioning=_ritz_conditioning(alphas, betas),
    )
    return MultiKSignal.from_array(ms.grid, x), report


def pf_recon(
    data,
    mask,
    method: str = "annihilation-vc",
    L: int | None = None,
    P: int | None = None,
    rank: int | None = None,
    tau: float = 0.05,
    tol: float = 1e-9,
    max_iters: int = 500,
) -> tuple[MultiKSignal, ReconReport]:
    """Fill one-sided partial coverage using conjugate symmetry.

    ``"annihilation-vc"`` appends conjugate-mirrored channels (measured
    wherever the mirrored index was acquired), fits a nullspace filter
    bank on the calibration region, and solves the hard-constrained
    annihilation problem over the augmented channel set.
    ``"lowrank-S"`` runs alternating-projection completion on the
    symmetric lifting.  Either way only the original channels are
    returned.
    """
    ms = _as_multi(data)
    masks = _norm_masks(mask, ms.q_count, ms.grid)
    if method == "lowrank-S":
        out, report = lowrank_complete(
            ms, masks, L=2 if L is None else L, P=2 if P is None else P,
            rank=rank, tau=tau, variant="S", tol=tol, max_iters=max_iters,
        )
        return out, report
    if method != "annihilation-vc":
        raise ValueError("method must be 'annihilation-vc' or 'lowrank-S'")
    L = 0 if L is None else L
    P = 0 if P is None else P
    if any(m.calib is None for m in masks):
        raise ValueError("annihilation-vc needs masks with a calibration region")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        aug = virtual_conjugate(ms)
    aug_masks = masks + [reflect_mask(m) for m in masks]
    # Fit where the calibration region overlaps its own mirror.
    rm = reflect_mask(masks[0])
    if rm.calib is None:
        raise ValueError("calibration region does not cover its own mirror")
    calib = tuple(
        (max(a, c), min(b, d))
        for (a, b), (c, d) in zip(masks[0].calib, rm.calib)
    )
    if any(lo > hi for lo, hi in calib):
        raise ValueError("calibration region does not straddle the center")
    bank = nullspace_filter_bank(aug, calib, L, P, tau=tau)
    out, report = annihilation_recon(
        aug, aug_masks, bank, lam=0.0, tol=tol, max_iters=max_iters
    )
    kept = MultiKSignal(tuple(out.channels[: ms.q_count]))
    report = ReconReport(
        method="annihilation-vc",
        iterations=report.iterations,
        converged=report.converged,
        objective_trace=report.objective_trace,
        conditioning=report.conditioning,
        notes=report.notes,
    )
    return kept, report
