"""Sampling patterns, noise, metrics, and batch experiments.

Masks come from a small declarative spec so any pattern is reproducible
bit-exactly from (spec, grid).  Reconstruction engines live in a
registry keyed by name; an experiment config fans out over methods,
noise levels, and seeds, scores every case against the closed-form
truth, and emits JSON + CSV tables (plus PGM renderings for 2D scenes).

Undersampling acts along the first axis: in 2D a "sample" is a full
line of constant row index, which is how acceleration is usually laid
out, and it keeps local patterns learnable.
"""

from __future__ import annotations

import csv
import json
import os
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (
    KGrid,
    KSignal,
    MultiKSignal,
    SamplingMask,
    centered_grid,
    zero_fill,
)
from .lp import (
    fit_interpolation_filters,
    interpolate_missing,
    nullspace_filter_bank,
    pattern_signature,
)
from .multi import MultiScene, scene_from_json, scene_samples
from .phantom import Phantom, Primitive, make_sensitivities
from .recon import ReconReport, annihilation_recon, lowrank_complete, report_to_json

MASK_KINDS = (
    "full",
    "lowres",
    "uniform",
    "random",
    "random_pf",
    "random_nocalib",
    "random_pf_nocalib",
    "stencil",
)


@dataclass(frozen=True)
class MaskSpec:
    """Declarative sampling pattern; every field is reproducibility input.

    ``calib`` and ``pf`` may be None to pick the defaults at generation
    time (an eighth of the grid, and 9/16).  Kinds ending in
    ``_nocalib`` reject a nonzero calib width.
    """

    kind: str
    r: int = 1
    calib: int | None = None
    pf: float | None = None
    seed: int = 0
    stencil: tuple | None = None

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.r < 1:
            raise ValueError("acceleration must be at least 1")
        if self.pf is not None:
            if self.kind not in ("random_pf", "random_pf_nocalib"):
                raise ValueError("pf fraction applies to *_pf kinds only")
            if not 0.5 < self.pf <= 1.0:
                raise ValueError("pf fraction must lie in (0.5, 1]")
        if self.calib is not None and self.calib < 0:
            raise ValueError("calib width must be nonnegative")
        if self.kind.endswith("_nocalib") and self.calib:
            raise ValueError(f"{self.kind} must not carry a calib width")
        if self.kind == "stencil" and self.stencil is None:
            raise ValueError("stencil kind needs a bitmap")

    def label(self) -> str:
        parts = [self.kind, f"R{self.r}"]
        if self.calib is not None:
            parts.append(f"C{self.calib}")
        if self.pf is not None:
            parts.append(f"F{self.pf:g}")
        if self.kind.startswith("random"):
            parts.append(f"S{self.seed}")
        return "-".join(parts)


def _calib_interval(width: int) -> tuple[int, int]:
    return -(width // 2), width - width // 2 - 1


def gen_mask(spec: MaskSpec, grid: KGrid) -> SamplingMask:
    """Generate the sampling pattern a spec describes, deterministically.

    Rules act on first-axis indices (full lines in 2D): ``uniform``
    keeps every r-th line counted from index 0, ``random`` draws
    ``ceil(lines / r)`` lines without replacement, ``lowres`` keeps the
    centered ``1/r`` fraction, and the ``_pf`` variants first restrict
    candidates to ``n >= n_max - round(pf * lines) + 1``.  The calib
    block (centered, all axes) is forced on afterwards except for
    ``_nocalib`` kinds.  ``stencil`` uses the supplied bitmap verbatim.
    """
    size0 = grid.shape[0]
    n0 = np.arange(grid.n_min[0], grid.n_max[0] + 1)
    want_calib = not spec.kind.endswith("_nocalib") and spec.kind != "stencil"
    cw = spec.calib if spec.calib is not None else (size0 // 8 if want_calib else 0)
    if cw > min(grid.shape):
        raise ValueError(f"calib width {cw} exceeds grid extent {min(grid.shape)}")
    calib = None
    if want_calib and cw > 0:
        calib = tuple(_calib_interval(cw) for _ in range(grid.dims))

    if spec.kind == "stencil":
        bitmap = np.asarray(spec.stencil, dtype=bool)
        if bitmap.shape != grid.shape:
            raise ValueError(
                f"stencil shape {bitmap.shape} does not match grid {grid.shape}"
            )
        sc = None
        if spec.calib:
            sc = tuple(_calib_interval(spec.calib) for _ in range(grid.dims))
        return SamplingMask(grid, bitmap, sc)

    if spec.kind in ("random_pf", "random_pf_nocalib"):
        f = spec.pf if spec.pf is not None else 9.0 / 16.0
        boundary = grid.n_max[0] - int(round(f * size0)) + 1
        keep = n0 >= boundary
        if calib is not None and calib[0][0] < boundary:
            raise ValueError(
                f"pf boundary {boundary} excludes the calibration block"
            )
    else:
        keep = np.ones(size0, dtype=bool)

    lines = np.zeros(size0, dtype=bool)
    if spec.kind == "full":
        lines[:] = True
    elif spec.kind == "lowres":
        count = -(-size0 // spec.r)
        lo, hi = _calib_interval(count)
        lines[(n0 >= lo) & (n0 <= hi)] = True
    elif spec.kind == "uniform":
        lines[(n0 % spec.r == 0) & keep] = True
    elif spec.kind.startswith("random"):
        pool = np.flatnonzero(keep)
        count = min(-(-len(pool) // spec.r), len(pool))
        rng = np.random.default_rng(spec.seed)
        pick = rng.choice(pool, size=count, replace=False)
        lines[np.sort(pick)] = True
    else:
        raise ValueError(f"unhandled kind {spec.kind!r}")

    acquired = np.zeros(grid.shape, dtype=bool)
    acquired[lines] = True
    if calib is not None:
        sl = tuple(slice(lo - g, hi - g + 1) for (lo, hi), g in zip(calib, grid.n_min))
        acquired[sl] = True
    return SamplingMask(grid, acquired, calib)


def add_noise(data, sigma: float, seed: int):
    """Add circular complex Gaussian noise, variance ``sigma**2`` per sample."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return data
    single = isinstance(data, KSignal)
    ms = MultiKSignal((data,)) if single else data
    rng = np.random.default_rng(seed)
    s = sigma / np.sqrt(2.0)
    out = []
    for sig in ms.channels:
        noise = s * (
            rng.standard_normal(sig.values.shape)
            + 1j * rng.standard_normal(sig.values.shape)
        )
        out.append(KSignal(sig.grid, sig.values + noise))
    return out[0] if single else MultiKSignal(tuple(out))


def nrmse(estimate, truth) -> float:
    """``||estimate - truth|| / ||truth||``; infinity when truth is all zero."""
    est = estimate.stack() if isinstance(estimate, MultiKSignal) else estimate.values
    tru = truth.stack() if isinstance(truth, MultiKSignal) else truth.values
    if est.shape != tru.shape:
        raise ValueError("estimate and truth shapes differ")
    denom = float(np.linalg.norm(tru))
    if denom == 0.0:
        return float(np.inf)
    return float(np.linalg.norm(est - tru)) / denom


@dataclass(frozen=True)
class Metrics:
    """Scores of one reconstruction against the known truth."""

    nrmse: float
    per_channel: tuple[float, ...] = ()
    conditioning: float | None = None


def score(estimate: MultiKSignal, truth: MultiKSignal, report: ReconReport | None = None) -> Metrics:
    per = tuple(nrmse(e, t) for e, t in zip(estimate.channels, truth.channels))
    return Metrics(
        nrmse=nrmse(estimate, truth),
        per_channel=per,
        conditioning=None if report is None else report.conditioning,
    )


def _engine_zero_fill(measured, mask, params):
    out = zero_fill(measured, mask if isinstance(mask, SamplingMask) else mask[0])
    if isinstance(out, KSignal):
        out = MultiKSignal((out,))
    return out, ReconReport(method="zero-fill", iterations=0, converged=True)


def _engine_interp(measured, mask, params):
    L = int(params.get("L", 2))
    P = int(params.get("P", 2))
    ridge = params.get("ridge")
    passes = int(params.get("passes", 4))
    max_resid = float(params.get("max_resid", 0.05))
    gain_ratio = float(params.get("gain_ratio", 50.0))
    ms = measured if isinstance(measured, MultiKSignal) else MultiKSignal((measured,))
    grid = ms.grid
    cur = MultiKSignal.from_array(grid, np.where(mask.acquired, ms.stack(), 0.0))
    eff = mask.acquired.copy()
    done = 0
    for done in range(1, passes + 1):
        if bool(np.all(eff)):
            done -= 1
            break
        eff_mask = SamplingMask(grid, eff, mask.calib)
        fmap, quality = fit_interpolation_filters(
            cur, eff_mask, L, P, ridge, return_quality=True
        )
        # Impute only where the calibration fit generalizes: tight
        # residual, and coefficient energy within gain_ratio of the most
        # stable pattern this pass (energies far above it mark overfit
        # filters that explode off the calibration region).  Gated-out
        # patterns wait for a later pass with a denser effective mask.
        fitted = {s for s in fmap if quality[s][0] <= max_resid}
        anchor = min((quality[s][1] for s in fitted), default=0.0)
        useful = {
            sig: mfs
            for sig, mfs in fmap.items()
            if sig in fitted and quality[sig][1] <= gain_ratio * max(anchor, 1e-3)
        }
        if not useful:
            break
        cur = interpolate_missing(cur, eff_mask, useful, strict=False)
        new_eff = eff.copy()
        for pos in eff_mask.missing_positions():
            n = tuple(int(p + lo) for p, lo in zip(pos, grid.n_min))
            if pattern_signature(eff_mask, n, L, P) in useful:
                new_eff[tuple(pos)] = True
        eff = new_eff
    covered = bool(np.all(eff))
    notes = () if covered else ("uncovered indices left at zero-fill",)
    return cur, ReconReport(
        method="interp", iterations=done, converged=covered, notes=notes
    )


def _engine_annihilation(measured, mask, params):
    L = int(params.get("L", 2))
    P = int(params.get("P", 2))
    tau = float(params.get("tau", 0.05))
    lam = float(params.get("lam", 0.0))
    tol = float(params.get("tol", 1e-9))
    max_iters = int(params.get("max_iters", 500))
    if mask.calib is None:
        raise ValueError("annihilation engine needs a calibration region")
    ms = measured if isinstance(measured, MultiKSignal) else MultiKSignal((measured,))
    # One relation per channel by default, mirroring per-channel kernels.
    limit = params.get("limit", ms.q_count)
    bank = nullspace_filter_bank(
        ms, mask.calib, L, P, tau=tau, limit=None if limit is None else int(limit)
    )
    return annihilation_recon(ms, mask, bank, lam=lam, tol=tol, max_iters=max_iters)


def _engine_lowrank(measured, mask, params):
    L = int(params.get("L", 2))
    P = int(params.get("P", 2))
    rank = params.get("rank")
    tau = float(params.get("tau", 0.05))
    variant = params.get("variant", "C")
    tol = float(params.get("tol", 1e-9))
    max_iters = int(params.get("max_iters", 100))
    return lowrank_complete(
        measured, mask, L=L, P=P,
        rank=None if rank is None else int(rank),
        tau=tau, variant=variant, tol=tol, max_iters=max_iters,
    )


ENGINES: dict[str, Callable] = {
    "zero-fill": _engine_zero_fill,
    "interp": _engine_interp,
    "annihilation": _engine_annihilation,
    "lowrank": _engine_lowrank,
}


def register_engine(name: str, fn: Callable) -> None:
    ENGINES[name] = fn


def demo_scene_1d() -> MultiScene:
    """Four-channel 1D scene used by the shipped experiments."""
    phantom = Phantom(
        (
            Primitive("boxcar", (-0.15,), (0.2,), 90.0),
            Primitive("boxcar", (0.22,), (0.1,), 60.0 * np.exp(1j * np.pi / 5)),
            Primitive("ellipse", (0.05,), (0.18,), 40.0),
        ),
        (1.0,),
    )
    return MultiScene(phantom, make_sensitivities(4, 2, seed=11))


def demo_scene_2d() -> MultiScene:
    """Eight-coil 64x64 scene used by the shipped experiments."""
    phantom = Phantom(
        (
            Primitive("ellipse", (0.0, 0.0), (0.32, 0.27), 100.0),
            Primitive("ellipse", (-0.08, 0.05), (0.12, 0.1), -35.0),
            Primitive("boxcar", (0.15, -0.12), (0.07, 0.09), 55.0 * np.exp(1j * np.pi / 7)),
        ),
        (1.0, 1.0),
    )
    return MultiScene(phantom, make_sensitivities(8, 2, seed=5, dims=2))


_NAMED_SCENES = {"demo1d": demo_scene_1d, "demo2d": demo_scene_2d}


def resolve_scene(entry):
    """Scene from a registry name, an inline JSON document, or a file path."""
    if isinstance(entry, str):
        if entry in _NAMED_SCENES:
            return _NAMED_SCENES[entry](), entry
        with open(entry, "r", encoding="utf-8") as fh:
            return scene_from_json(json.load(fh)), entry
    return scene_from_json(entry), str(entry.get("kind", "scene"))


def write_pgm(path, magnitude: np.ndarray) -> None:
    """16-bit max-normalized P5 rendering of a 2D magnitude array."""
    mag = np.asarray(magnitude, dtype=float)
    if mag.ndim != 2:
        raise ValueError("PGM rendering needs a 2D array")
    peak = float(mag.max())
    scaled = np.zeros(mag.shape, dtype=">u2")
    if peak > 0:
        scaled = np.round(mag / peak * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mag.shape[1]} {mag.shape[0]}\n65535\n".encode("ascii"))
        fh.write(scaled.tobytes())


def image_magnitude(data) -> np.ndarray:
    """Root-sum-of-squares spatial magnitude of (multi-channel) samples."""
    ms = data if isinstance(data, MultiKSignal) else MultiKSignal((data,))
    grid = ms.grid
    acc = np.zeros(grid.shape)
    for sig in ms.channels:
        # Roll index n to array slot n mod N so ifftn sees DFT ordering.
        shifted = np.roll(sig.values, grid.n_min, axis=tuple(range(grid.dims)))
        img = np.fft.ifftn(shifted)
        acc += np.abs(np.fft.fftshift(img)) ** 2
    return np.sqrt(acc)


def _method_entry(m) -> tuple[str, dict]:
    if isinstance(m, str):
        return m, {}
    m = dict(m)
    return m.pop("name"), m


def run_experiment(config: dict, out_dir=None) -> dict:
    """Fan an experiment config out over methods, noise levels, and seeds.

    Config keys: ``scene`` (registry name, path, or inline document),
    ``grid`` (size or per-axis list), ``fov``, ``mask`` (spec fields),
    ``methods`` (names or ``{"name": ..., params}``), ``sigmas``,
    ``seeds``, optional ``timing`` to record wall time.  Per-case
    failures are recorded and the run continues.

    Returns the report document; with ``out_dir`` also writes
    ``report.json``, ``report.csv``, and per-case PGM renderings for 2D
    scenes.
    """
    scene, scene_label = resolve_scene(config["scene"])
    if not isinstance(scene, MultiScene):
        raise ValueError("experiments run on multi-channel scenes")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    shape = config["grid"]
    fov = config.get("fov", 1.0)
    grid = centered_grid(shape, fov)
    mask_cfg = dict(config["mask"])
    spec = MaskSpec(
        kind=mask_cfg.pop("kind"),
        r=int(mask_cfg.pop("accel", mask_cfg.pop("r", 1))),
        calib=mask_cfg.pop("calib", None),
        pf=mask_cfg.pop("pf", None),
        seed=int(mask_cfg.pop("seed", 0)),
        stencil=mask_cfg.pop("stencil", None),
    )
    if mask_cfg:
        raise ValueError(f"unknown mask fields: {sorted(mask_cfg)}")
    mask = gen_mask(spec, grid)
    methods = [_method_entry(m) for m in config.get("methods", [])]
    sigmas = [float(s) for s in config.get("sigmas", [0.0])]
    seeds = [int(s) for s in config.get("seeds", [0])]
    timing = bool(config.get("timing", False))

    if not methods:
        warnings.warn("empty method list; emitting an empty table", stacklevel=2)

    truth = scene_samples(scene, grid)
    rows = []
    case_reports = []
    for name, params in methods:
        for sigma in sigmas:
            for seed in seeds:
                noisy = add_noise(truth, sigma, seed)
                measured = zero_fill(noisy, mask)
                row = {
                    "scene": scene_label,
                    "mask": spec.label(),
                    "method": name,
                    "sigma": sigma,
                    "seed": seed,
                    "nrmse": float("nan"),
                    "iterations": 0,
                    "wall_ms": 0.0,
                }
                detail = {"error": None, "report": None}
                try:
                    if name not in ENGINES:
                        raise ValueError(f"unknown engine {name!r}")
                    t0 = time.perf_counter()
                    est, report = ENGINES[name](measured, mask, params)
                    elapsed = (time.perf_counter() - t0) * 1000.0
                    row["nrmse"] = nrmse(est, truth)
                    row["iterations"] = report.iterations
                    if timing:
                        row["wall_ms"] = elapsed
                    detail["report"] = report_to_json(report)
                    if out_dir is not None and grid.dims == 2:
                        stem = f"{scene_label}_{spec.label()}_{name}_sg{sigma:g}_sd{seed}"
                        write_pgm(
                            f"{out_dir}/{stem}.pgm", image_magnitude(est)
                        )
                except Exception as exc:  # per-case isolation is the contract
                    detail["error"] = f"{type(exc).__name__}: {exc}"
                rows.append(row)
                case_reports.append(detail)

    order = sorted(
        range(len(rows)),
        key=lambda i: (
            rows[i]["scene"], rows[i]["mask"], rows[i]["method"],
            rows[i]["sigma"], rows[i]["seed"],
        ),
    )
    rows = [rows[i] for i in order]
    case_reports = [case_reports[i] for i in order]
    doc = {
        "version": 1,
        "kind": "experiment-report",
        "rows": rows,
        "cases": case_reports,
    }
    if out_dir is not None:
        with open(f"{out_dir}/report.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")
        with open(f"{out_dir}/report.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["scene", "mask", "method", "sigma", "seed", "nrmse", "iterations", "wall_ms"]
            )
            for row in rows:
                writer.writerow(
                    [
                        row["scene"], row["mask"], row["method"],
                        f"{row['sigma']:g}", row["seed"],
                        repr(row["nrmse"]), row["iterations"], f"{row['wall_ms']:g}",
                    ]
                )
    return doc
