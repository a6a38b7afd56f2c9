"""Scenes with several receive channels or superposed slices.

A multi-channel scene pairs one object with per-channel spatial
modulators; its samples follow from the base samples by coefficient
convolution, so everything stays closed-form.  A superposition scene
holds several objects whose samples are only observed summed; short
separator filters applied to the sum recover the individual objects
whenever each filter's spatial response is near one on its own object's
support and near zero on the others.

The identity checks mirror the single-image one: a truncated response
energy on the sample side against a quadrature energy integral on the
spatial side, with an explicit bound on the truncated tail.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Filter, KGrid, KSignal, MultiFilter, MultiKSignal, SamplingMask, conv_apply
from .lp import IdentityCheck, _decay_constant as _decay, _lhs_energy, _ridge_solve, build_calib_matrix
from .phantom import (
    Modulator,
    Phantom,
    modulated_samples,
    modulator_from_json,
    modulator_to_json,
    phantom_from_json,
    phantom_to_json,
    samples_at,
    spatial_profile,
)
from .quadrature import merge_edges, piecewise_quad
from .recon import ReconReport, _cg, _conv_valid, _corr_full, _ritz_conditioning


@dataclass(frozen=True, eq=False)
class MultiScene:
    """One object observed through per-channel spatial modulators."""

    phantom: Phantom
    sensitivities: tuple[Modulator, ...]

    def __post_init__(self):
        sens = tuple(self.sensitivities)
        if not sens:
            raise ValueError("scene needs at least one channel")
        object.__setattr__(self, "sensitivities", sens)

    @property
    def q_count(self) -> int:
        return len(self.sensitivities)


@dataclass(frozen=True, eq=False)
class SmsScene:
    """Several objects on a shared field of view, observed superposed."""

    slices: tuple[Phantom, ...]
    sensitivities: tuple[Modulator, ...] | None = None

    def __post_init__(self):
        slices = tuple(self.slices)
        if len(slices) < 2:
            raise ValueError("superposition scene needs at least two slices")
        fov = slices[0].fov
        for s in slices[1:]:
            if s.fov != fov:
                raise ValueError("slices must share the field of view")
        object.__setattr__(self, "slices", slices)
        if self.sensitivities is not None:
            object.__setattr__(self, "sensitivities", tuple(self.sensitivities))

    @property
    def r_count(self) -> int:
        return len(self.slices)


def scene_samples(scene: MultiScene, grid: KGrid) -> MultiKSignal:
    """Closed-form samples of every channel of a multi-channel scene."""
    return MultiKSignal(
        tuple(modulated_samples(scene.phantom, c, grid) for c in scene.sensitivities)
    )


def sms_slice_samples(scene: SmsScene, grid: KGrid):
    """Per-slice samples: a tuple of KSignal, or of MultiKSignal with coils."""
    if scene.sensitivities is None:
        return tuple(
            KSignal(grid, samples_at(p, grid.index_mesh())) for p in scene.slices
        )
    return tuple(
        MultiKSignal(
            tuple(modulated_samples(p, c, grid) for c in scene.sensitivities)
        )
        for p in scene.slices
    )


def sms_superpose(slices):
    """Sum per-slice data into the observed superposed samples."""
    slices = tuple(slices)
    if len(slices) < 2:
        raise ValueError("superposition needs at least two slices")
    if isinstance(slices[0], KSignal):
        acc = slices[0].values.copy()
        for s in slices[1:]:
            if s.grid != slices[0].grid:
                raise ValueError("slices must share the grid")
            acc = acc + s.values
        return KSignal(slices[0].grid, acc)
    out = []
    for c in range(slices[0].q_count):
        acc = slices[0].channels[c].values.copy()
        for s in slices[1:]:
            acc = acc + s.channels[c].values
        out.append(KSignal(slices[0].grid, acc))
    return MultiKSignal(tuple(out))


def smash_fit(
    sensitivities: Sequence[Modulator],
    L: int,
    P: int,
    target: int = 0,
    fov: float = 1.0,
    points: int = 1024,
    ridge: float | None = None,
) -> tuple[MultiFilter, float]:
    """Fit channel/tap weights whose modulator combination cancels, 1D.

    Minimizes the spatial residual of
    ``sum_q sum_k h_q[k] c_q(x) exp(i 2 pi k x / B)`` with the target
    channel's ``k = 0`` weight anchored at -1, sampled on a uniform
    spatial grid.  A small residual makes the filter annihilate the
    samples of any object seen through these modulators, whatever the
    object.

    Returns:
        ``(filter, residual)`` with residual the RMS spatial error.
    """
    sens = tuple(sensitivities)
    if not sens:
        raise ValueError("need at least one modulator")
    b = float(fov)
    if b <= 0:
        raise ValueError("fov must be positive")
    if not 0 <= target < len(sens):
        raise ValueError("target channel out of range")
    x = (np.arange(points) / points - 0.5) * b
    k = np.arange(-L, P + 1)
    basis = np.exp(2j * np.pi * np.multiply.outer(x, k) / b)
    cols = []
    for q, c in enumerate(sens):
        cvals = c.eval_spatial(x, (b,))
        for j in range(len(k)):
            cols.append(cvals * basis[:, j])
    A = np.stack(cols, axis=1)
    width = L + P + 1
    tgt = target * width + L
    free = [j for j in range(A.shape[1]) if j != tgt]
    coef, resid = _ridge_solve(A[:, free], A[:, tgt], ridge)
    taps = np.zeros((len(sens), width), dtype=np.complex128)
    flat = taps.reshape(-1)
    flat[free] = coef
    flat[tgt] = -1.0
    mf = MultiFilter(
        tuple(
            Filter(taps[q], L, P, anchor_fixed=(q == target))
            for q in range(len(sens))
        )
    )
    return mf, resid / np.sqrt(points)


@dataclass(frozen=True)
class SeparatorReport:
    """Fit quality of a slice separator."""

    residual: float
    leakage: float
    mu: float
    rows: int


def sms_fit_separator(
    slices: Sequence[KSignal],
    target: int,
    L: int = 1,
    P: int = 0,
    calib=None,
    mu: float = 1.0,
    ridge: float | None = None,
) -> tuple[Filter, SeparatorReport]:
    """Fit a separator reproducing one slice from the superposed sum.

    Least squares over calibration windows: the filter applied to the
    sum should return the target slice's samples (reproduction rows),
    and applied to each other slice alone should return zero (leakage
    rows, weighted by ``sqrt(mu)``).

    Returns:
        ``(filter, report)`` with RMS reproduction residual and RMS
        unweighted leakage.
    """
    slices = tuple(slices)
    if len(slices) < 2:
        raise ValueError("need at least two slices")
    if not 0 <= target < len(slices):
        raise ValueError("target slice out of range")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    summed = sms_superpose(slices)
    cm_sum = build_calib_matrix(summed, calib, L, P)
    rows = cm_sum.rows
    row_n = cm_sum.row_index()[:, 0]
    tgt_sl = slices[target]
    y = tgt_sl.values[row_n - tgt_sl.grid.n_min[0]]
    blocks_a = [cm_sum.matrix]
    blocks_y = [y]
    leak_mats = []
    for r, s in enumerate(slices):
        if r == target:
            continue
        cm_r = build_calib_matrix(s, calib, L, P)
        leak_mats.append(cm_r.matrix)
        if mu > 0:
            blocks_a.append(np.sqrt(mu) * cm_r.matrix)
            blocks_y.append(np.zeros(rows, dtype=np.complex128))
    A = np.concatenate(blocks_a, axis=0)
    yy = np.concatenate(blocks_y)
    coef, _ = _ridge_solve(A, yy, ridge)
    repro = float(np.linalg.norm(cm_sum.matrix @ coef - y)) / np.sqrt(rows)
    leak_sq = sum(float(np.sum(np.abs(m @ coef) ** 2)) for m in leak_mats)
    leakage = np.sqrt(leak_sq / (rows * max(len(leak_mats), 1)))
    filt = Filter(coef, L, P)
    return filt, SeparatorReport(repro, float(leakage), mu, rows)


def sms_fit_separator_coils(
    slices: Sequence[MultiKSignal],
    target_slice: int,
    target_coil: int,
    L: int = 1,
    P: int = 0,
    calib=None,
    mu: float = 1.0,
    ridge: float | None = None,
) -> tuple[MultiFilter, SeparatorReport]:
    """Coil-aware separator: all coils' sums feed one slice/coil target."""
    slices = tuple(slices)
    if len(slices) < 2:
        raise ValueError("need at least two slices")
    q = slices[0].q_count
    if not 0 <= target_slice < len(slices):
        raise ValueError("target slice out of range")
    if not 0 <= target_coil < q:
        raise ValueError("target coil out of range")
    summed = sms_superpose(slices)
    cm_sum = build_calib_matrix(summed, calib, L, P)
    rows = cm_sum.rows
    row_n = cm_sum.row_index()[:, 0]
    tgt = slices[target_slice].channels[target_coil]
    y = tgt.values[row_n - tgt.grid.n_min[0]]
    blocks_a = [cm_sum.matrix]
    blocks_y = [y]
    leak_mats = []
    for r, s in enumerate(slices):
        if r == target_slice:
            continue
        cm_r = build_calib_matrix(s, calib, L, P)
        leak_mats.append(cm_r.matrix)
        if mu > 0:
            blocks_a.append(np.sqrt(mu) * cm_r.matrix)
            blocks_y.append(np.zeros(rows, dtype=np.complex128))
    A = np.concatenate(blocks_a, axis=0)
    yy = np.concatenate(blocks_y)
    coef, _ = _ridge_solve(A, yy, ridge)
    repro = float(np.linalg.norm(cm_sum.matrix @ coef - y)) / np.sqrt(rows)
    leak_sq = sum(float(np.sum(np.abs(m @ coef) ** 2)) for m in leak_mats)
    leakage = np.sqrt(leak_sq / (rows * max(len(leak_mats), 1)))
    width = L + P + 1
    taps = coef.reshape(q, width)
    mf = MultiFilter(tuple(Filter(taps[c], L, P) for c in range(q)))
    return mf, SeparatorReport(repro, float(leakage), mu, rows)


def sms_separate(
    summed: KSignal,
    separators: Sequence[Filter],
    mask: SamplingMask | None = None,
    lam: float = 1.0,
    tol: float = 1e-9,
    max_iters: int = 500,
) -> tuple[MultiKSignal, ReconReport]:
    """Split superposed samples into slices with one separator each.

    Fully sampled data is split directly: slice ``m`` is separator ``m``
    applied to the sum, on the shrunken valid grid.  With a mask, the
    slices become joint unknowns: conjugate gradients balances summed
    data consistency on acquired indices against each slice's separator
    relation (weighted by ``lam``), returning slices on the full grid.
    """
    seps = tuple(separators)
    if not seps:
        raise ValueError("need one separator per slice")
    L, P = seps[0].L, seps[0].P
    for f in seps[1:]:
        if (f.L, f.P) != (L, P):
            raise ValueError("separators must share tap support")
    if mask is None or bool(np.all(mask.acquired)):
        outs = tuple(conv_apply(summed, f) for f in seps)
        return MultiKSignal(outs), ReconReport(
            method="sms-direct", iterations=0, converged=True
        )
    if mask.grid != summed.grid:
        raise ValueError("mask grid differs from data grid")
    if lam <= 0:
        raise ValueError("undersampled separation needs lam > 0")
    r_count = len(seps)
    grid = summed.grid
    valid = grid.valid_for(L, P)
    vsl = tuple(
        slice(vlo - glo, vhi - glo + 1)
        for vlo, vhi, glo in zip(valid.n_min, valid.n_max, grid.n_min)
    )
    acq = mask.acquired
    y = np.where(acq, summed.values, 0.0)
    shape = (r_count,) + grid.shape

    def apply_a(vec):
        x = vec.reshape(shape)
        t = x.sum(axis=0)
        cons = np.where(acq, t, 0.0)
        out = np.broadcast_to(cons, shape).copy()
        for m, f in enumerate(seps):
            resp = _conv_valid(t, f.taps) - x[m][vsl]
            back = _corr_full(resp, f.taps)
            out += lam * back
            out[m][vsl] -= lam * resp
        return out.reshape(-1)

    b = np.broadcast_to(y, shape).copy().reshape(-1)
    f0 = float(np.sum(np.abs(y[acq]) ** 2))
    sol, iters, converged, alphas, betas, drops = _cg(apply_a, b, tol, max_iters)
    trace = [f0]
    for d in drops:
        trace.append(trace[-1] - d)
    report = ReconReport(
        method="sms-joint",
        iterations=iters,
        converged=converged,
        objective_trace=tuple(trace),
        conditioning=_ritz_conditioning(alphas, betas),
    )
    return MultiKSignal.from_array(grid, sol.reshape(shape)), report


def sms_separate_coils(
    summed: MultiKSignal,
    separators: Sequence[Sequence[MultiFilter]],
) -> tuple[MultiKSignal, ...]:
    """Split fully sampled per-coil sums into per-slice coil sets.

    ``separators[m][c]`` maps all coils of the sum to slice ``m``,
    coil ``c``.
    """
    out = []
    for per_slice in separators:
        coils = []
        for mf in per_slice:
            resp = None
            for q, f in enumerate(mf.filters):
                r = conv_apply(summed.channels[q], f)
                resp = r if resp is None else KSignal(r.grid, resp.values + r.values)
            coils.append(resp)
        out.append(MultiKSignal(tuple(coils)))
    return tuple(out)


def _spatial_filter(filt: Filter, b: float):
    k = np.arange(-filt.L, filt.P + 1)

    def h(x):
        return (np.exp(2j * np.pi * np.multiply.outer(x, k) / b) @ filt.taps) / b

    return h


def _tail(c_tot: float, kmax: int, grid: KGrid, L: int, P: int) -> float:
    lo_v, hi_v = grid.n_min[0] + P, grid.n_max[0] - L
    if hi_v - kmax < 1 or -lo_v - kmax < 1:
        return float(np.inf)
    return c_tot**2 * (1.0 / (hi_v - kmax) + 1.0 / (-lo_v - kmax))


def check_multichannel_identity(
    phantom: Phantom,
    sensitivities: Sequence[Modulator],
    mfilt: MultiFilter,
    grid: KGrid,
    quadrature_points: int = 4096,
) -> IdentityCheck:
    """Joint response energy against its spatial integral, several channels.

    lhs sums ``|sum_q sum_k h_q[k] x_q[n-k]|^2`` over the grid's valid
    indices with each channel's samples closed-form; rhs integrates
    ``(1/B) |rho(x)|^2 |sum_q c_q(x) h_q(x)|^2``.
    """
    sens = tuple(sensitivities)
    if phantom.dims != 1 or grid.dims != 1:
        raise ValueError("identity check is 1D only")
    if len(sens) != mfilt.q_count:
        raise ValueError("one modulator per filter channel required")
    b = phantom.fov[0]

    fns = []
    for c in sens:
        def fn(n, c=c):
            g = KGrid.window((int(n[0]),), (int(n[-1]),), (b,))
            return modulated_samples(phantom, c, g).values

        fns.append(fn)
    lhs = _lhs_energy(fns, list(mfilt.filters), grid)

    hs = [_spatial_filter(f, b) for f in mfilt.filters]
    edges = merge_edges(phantom.support_edges(), -b / 2, b / 2)

    def integrand(x, mid):
        rho = spatial_profile(phantom, x, mid)
        comb = sum(c.eval_spatial(x, (b,)) * h(x) for c, h in zip(sens, hs))
        return np.abs(rho) ** 2 * np.abs(comb) ** 2

    rhs = float(piecewise_quad(integrand, edges, points=quadrature_points)) / b

    c_rho = _decay(phantom)
    c_tot = 0.0
    m_max = 0
    for c, f in zip(sens, mfilt.filters):
        coeff_sum = float(np.sum(np.abs(c.coeffs)))
        norm1 = float(np.sum(np.abs(f.taps)))
        c_tot += norm1 * coeff_sum * c_rho / b
        lo = abs(c.n_min[0])
        hi = abs(c.n_min[0] + len(c.coeffs) - 1)
        m_max = max(m_max, lo, hi)
    kmax = max(mfilt.L, mfilt.P) + m_max
    return IdentityCheck(lhs, rhs, _tail(c_tot, kmax, grid, mfilt.L, mfilt.P))


def check_superposition_identity(
    slices: Sequence[Phantom],
    target: int,
    filt: Filter,
    grid: KGrid,
    quadrature_points: int = 4096,
) -> IdentityCheck:
    """Separator error energy against its spatial integral.

    lhs sums ``|sum_k h[k] s[n-k] - x_m[n]|^2`` over valid indices with
    ``s`` the summed slices; rhs integrates
    ``(1/B) |h(x) s(x) - rho_m(x)|^2`` over the union of supports.
    """
    slices = tuple(slices)
    if not 0 <= target < len(slices):
        raise ValueError("target slice out of range")
    if any(p.dims != 1 for p in slices) or grid.dims != 1:
        raise ValueError("identity check is 1D only")
    b = slices[0].fov[0]

    def sum_fn(n):
        return sum(samples_at(p, (n,)) for p in slices)

    def tgt_fn(n):
        return samples_at(slices[target], (n,))

    width = filt.L + filt.P + 1
    delta = np.zeros(width, dtype=np.complex128)
    delta[filt.L] = -1.0
    neg = Filter(delta, filt.L, filt.P)
    lhs = _lhs_energy([sum_fn, tgt_fn], [filt, neg], grid)

    h = _spatial_filter(filt, b)
    edges = []
    for p in slices:
        edges.extend(p.support_edges())
    edges = merge_edges(edges, -b / 2, b / 2)

    def integrand(x, mid):
        s = sum(spatial_profile(p, x, mid) for p in slices)
        rho_m = spatial_profile(slices[target], x, mid)
        return np.abs(h(x) * s - rho_m) ** 2

    rhs = float(piecewise_quad(integrand, edges, points=quadrature_points)) / b

    c_sum = sum(_decay(p) for p in slices)
    c_tot = float(np.sum(np.abs(filt.taps))) * c_sum + _decay(slices[target])
    kmax = max(filt.L, filt.P)
    return IdentityCheck(lhs, rhs, _tail(c_tot, kmax, grid, filt.L, filt.P))


def scene_to_json(scene) -> dict:
    if isinstance(scene, MultiScene):
        return {
            "version": 1,
            "kind": "scene",
            "phantom": phantom_to_json(scene.phantom),
            "sensitivities": [modulator_to_json(c) for c in scene.sensitivities],
        }
    if isinstance(scene, SmsScene):
        doc = {
            "version": 1,
            "kind": "sms-scene",
            "slices": [phantom_to_json(p) for p in scene.slices],
        }
        if scene.sensitivities is not None:
            doc["sensitivities"] = [modulator_to_json(c) for c in scene.sensitivities]
        return doc
    raise TypeError("expected MultiScene or SmsScene")


def scene_from_json(doc: dict):
    kind = doc.get("kind")
    if kind == "scene":
        return MultiScene(
            phantom_from_json(doc["phantom"]),
            tuple(modulator_from_json(c) for c in doc["sensitivities"]),
        )
    if kind == "sms-scene":
        sens = doc.get("sensitivities")
        return SmsScene(
            tuple(phantom_from_json(p) for p in doc["slices"]),
            None if sens is None else tuple(modulator_from_json(c) for c in sens),
        )
    raise ValueError(f"unknown scene kind: {kind!r}")


def save_scene(path, scene) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_json(scene), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_scene(path):
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_json(json.load(fh))
