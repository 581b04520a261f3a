"""Built-in invariant checks, run by ``timelens selftest`` (a few seconds)."""
from __future__ import annotations

import numpy as np

from .envelope import ComplexEnvelope, SignalGrid, fft, ifft, inner_product
from .optimizer import OptimizerConfig, optimize_single
from .propagation import CascadeDesign, SpectralFilter, propagate_backward, propagate_forward
from .rng import rng
from .targets import ModulationSpec, matched_filter_symbols, synthesize_target


def _fft_roundtrip():
    x = rng(1, "selftest/fft").complex_normal(1024)
    return float(np.max(np.abs(ifft(fft(x)) - x))) < 1e-12


def _unitary_cascade():
    grid = SignalGrid(1024, 64e9)
    design = CascadeDesign.uniform(grid, 3, SpectralFilter("quadratic_dispersion", -1321.0))
    design = design.with_masks(rng(2, "selftest/masks").uniform(3 * 1024).reshape(3, 1024) * 6)
    x = ComplexEnvelope(grid, rng(3, "selftest/field").complex_normal(1024)).normalized()
    y, _ = propagate_forward(x, design, keep_trace=False)
    back, _ = propagate_backward(y, design, keep_trace=False)
    return abs(y.energy - 1) < 1e-12 and np.max(np.abs(back.samples - x.samples)) < 1e-12


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _random_cascades():
    # zero designs are identities; random designs conserve energy and invert
    grid = SignalGrid(256, 64e9)
    r = rng(4, "selftest/cascades")
    for trial in range(200):
        n = 1 + trial % 6
        x = ComplexEnvelope(grid, r.complex_normal(256))
        ident = CascadeDesign.uniform(grid, n, SpectralFilter("quadratic_dispersion", 0.0))
        y0, _ = propagate_forward(x, ident, keep_trace=False)
        if np.max(np.abs(y0.samples - x.samples)) > 1e-12 * np.max(np.abs(x.samples)):
            return False
        filt = SpectralFilter("quadratic_dispersion", (r.uniform(1)[0] - 0.5) * 4000)
        design = CascadeDesign.uniform(grid, n, filt, trailing_filter=bool(trial % 2),
                                       masks=r.uniform(n * 256).reshape(n, 256) * 2 * np.pi)
        y, _ = propagate_forward(x, design, keep_trace=False)
        back, _ = propagate_backward(y, design, keep_trace=False)
        if abs(y.energy - x.energy) > 1e-10 * x.energy or _rel(back.samples, x.samples) > 1e-10:
            return False
    return True


def _scaling_law():
    # halving the time scale with a quarter of the dispersion keeps the map
    g, gc = SignalGrid(1024, 80e9), SignalGrid(1024, 160e9)
    masks = rng(5, "selftest/scaling").uniform(3 * 1024).reshape(3, 1024) * 2 * np.pi
    x = rng(6, "selftest/scaling-field").complex_normal(1024)
    y, _ = propagate_forward(ComplexEnvelope(g, x), CascadeDesign.uniform(
        g, 3, SpectralFilter("quadratic_dispersion", -1321.0), masks=masks), keep_trace=False)
    yc, _ = propagate_forward(ComplexEnvelope(gc, x), CascadeDesign.uniform(
        gc, 3, SpectralFilter("quadratic_dispersion", -1321.0 / 4), masks=masks), keep_trace=False)
    return _rel(yc.samples, y.samples) < 1e-9


def _monotone_sweeps():
    grid = SignalGrid(128, 40e9)
    cw = ComplexEnvelope(grid, np.ones(128, complex)).normalized()
    filt = SpectralFilter("quadratic_dispersion", -1321.0)
    for j in range(10):
        target = ComplexEnvelope(grid, rng(7, f"selftest/monotone/{j}").complex_normal(128)).normalized()
        design = CascadeDesign.uniform(grid, 1 + j % 4, filt)
        cfg = OptimizerConfig(max_iterations=20, convergence_tolerance=1e-12)
        _, report = optimize_single(cw, target, design, cfg)
        start = abs(inner_product(propagate_forward(cw, design, keep_trace=False)[0], target))
        if np.min(np.diff([start] + report.history)) < -1e-9:
            return False
    return True


def _exact_recovery():
    grid = SignalGrid(512, 160e9)
    t = grid.time_axis()
    theta = 2.0 * np.sin(2 * np.pi * 5 * t / grid.duration)
    cw = ComplexEnvelope(grid, np.ones(512, complex)).normalized()
    target = ComplexEnvelope(grid, np.exp(1j * theta)).normalized()
    design = CascadeDesign.uniform(grid, 1, SpectralFilter("quadratic_dispersion", 0.0))
    _, report = optimize_single(cw, target, design, OptimizerConfig(max_iterations=5))
    return report.final_trace_magnitude >= 1 - 1e-9


def _target_symbols():
    grid = SignalGrid(1024, 160e9)
    spec = ModulationSpec("QPSK", 10e9, num_symbols=64, data_seed=5)
    env, sym = synthesize_target(spec, grid)
    rx = matched_filter_symbols(env, spec)
    rx = rx / np.sqrt(np.mean(np.abs(rx) ** 2))
    return float(np.max(np.abs(rx - sym))) < 1e-9


def _small_design():
    grid = SignalGrid(1024, 160e9)
    spec = ModulationSpec("QPSK", 10e9, num_symbols=64, data_seed=7)
    target, _ = synthesize_target(spec, grid)
    cw = ComplexEnvelope(grid, np.ones(1024, complex)).normalized()
    design = CascadeDesign.uniform(grid, 4, SpectralFilter("quadratic_dispersion", -1321.0))
    _, report = optimize_single(cw, target, design, OptimizerConfig(max_iterations=200))
    return report.final_trace_magnitude > 0.95


CHECKS = {
    "fft round trip": _fft_roundtrip,
    "cascade is unitary and invertible": _unitary_cascade,
    "identity, energy and round trip on random cascades": _random_cascades,
    "dispersion scaling law": _scaling_law,
    "optimizer sweeps are monotone": _monotone_sweeps,
    "exact recovery of a phase-only target": _exact_recovery,
    "matched filter recovers symbols": _target_symbols,
    "small single-channel design": _small_design,
}


def run(out=print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        passed = bool(check())
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
