"""Job specs, end-to-end runs and run manifests."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, plotting
from .dsp import (DspConfig, ImpairmentSpec, align, carrier_suppression_db,
                  cross_correlation_matrix, evm_percent, extract_channel, inject_impairments,
                  random_correlation_baseline, receiver_chain, waveform_correlation)
from .envelope import ComplexEnvelope, SignalGrid, set_fft_workers, tone
from .fileio import (SCHEMA, FormatError, complex_matrix_to_json, dump_json, load_design,
                     read_envelope, save_design, sha256_file, write_complex_points_csv,
                     write_envelope, write_json)
from .optimizer import ConstraintSet, OptimizerConfig, optimize
from .propagation import CascadeDesign, SpectralFilter, propagate_forward
from .rng import rng
from .targets import ModulationSpec, combine_lines, matched_filter_symbols, synthesize_target

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


class ValidationError(ValueError):
    """A job spec violates a cross-module invariant."""


# -- spec sections -------------------------------------------------------------

def _strict(cls, d: dict | None, where: str, **nested):
    """Build dataclass ``cls`` from ``d``, rejecting unknown keys."""
    d = dict(d or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    for key, sub in nested.items():
        if key in d:
            d[key] = sub(d[key])
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: {exc}") from exc


@dataclass(frozen=True)
class GridConfig:
    """``sample_rate=None`` sizes the window to the first channel's symbol pattern."""

    num_samples: int = 8192
    sample_rate: float | None = None


@dataclass(frozen=True)
class FilterConfig:
    kind: str = "quadratic_dispersion"
    dispersion_ps_per_nm: float = -1321.0
    reference_wavelength_nm: float = 1550.0

    def build(self) -> SpectralFilter:
        if self.kind != "quadratic_dispersion":
            raise ValidationError("job specs support quadratic_dispersion filters only")
        return SpectralFilter(self.kind, self.dispersion_ps_per_nm, self.reference_wavelength_nm)


@dataclass(frozen=True)
class CascadeConfig:
    num_stages: int = 8
    filter: FilterConfig = field(default_factory=FilterConfig)
    trailing_filter: bool = True


@dataclass(frozen=True)
class ModulationConfig:
    format: str = "QPSK"
    baud_rate: float = 15e9
    rrc_rolloff: float = 0.01
    num_symbols: int = 512
    data_seed: int | None = None
    max_zero_run: int | None = None


@dataclass(frozen=True)
class ChannelConfig:
    offset_hz: float = 0.0
    weight: float = 1.0
    modulation: ModulationConfig = field(default_factory=ModulationConfig)


@dataclass(frozen=True)
class OptimizerSection:
    max_iterations: int = 1000
    tolerance: float = 1e-6
    sweep_order: str = "alternating"
    step_size: float = 1.0
    init_amplitude: float = 0.0
    seed: int | None = None


@dataclass(frozen=True)
class EvaluationConfig:
    impairments: dict | None = None
    dsp: dict | None = None
    noise_seed: int = 0
    baseline_trials: int = 30
    channel_bandwidth_hz: float | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str | None = None
    figures: bool = True
    stage_traces: bool = True


@dataclass(frozen=True)
class JobSpec:
    name: str = "job"
    seed: int = 1
    grid: GridConfig = field(default_factory=GridConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    constraints: dict = field(default_factory=dict)
    channels: tuple[ChannelConfig, ...] = (ChannelConfig(),)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    threads: int = 1

    def __post_init__(self):
        canonical = _strict(ConstraintSet, self.constraints, "constraints").to_dict()
        object.__setattr__(self, "constraints", canonical)
        object.__setattr__(self, "channels", tuple(self.channels))

    # -- (de)serialization --

    @classmethod
    def from_dict(cls, d: dict) -> "JobSpec":
        if not isinstance(d, dict):
            raise ValidationError("job spec must be a JSON object")
        d = dict(d)
        schema = d.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ValidationError(f"unsupported schema {schema!r}")

        def channel(c):
            return _strict(ChannelConfig, c, "channels[]",
                           modulation=lambda m: _strict(ModulationConfig, m, "modulation"))

        spec = _strict(cls, d, "job", **{
            "grid": lambda g: _strict(GridConfig, g, "grid"),
            "cascade": lambda c: _strict(CascadeConfig, c, "cascade",
                                         filter=lambda f: _strict(FilterConfig, f, "filter")),
            "channels": lambda cs: tuple(channel(c) for c in cs),
            "optimizer": lambda o: _strict(OptimizerSection, o, "optimizer"),
            "evaluation": lambda e: _strict(EvaluationConfig, e, "evaluation"),
            "output": lambda o: _strict(OutputConfig, o, "output"),
        })
        spec.validate()
        return spec

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = [dataclasses.asdict(c) for c in self.channels]
        d["schema"] = SCHEMA
        return d

    @classmethod
    def from_json(cls, text: str) -> "JobSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"job spec is not valid JSON: {exc}") from exc

    def to_json(self) -> str:
        return dump_json(self.to_dict())

    @classmethod
    def load(cls, path) -> "JobSpec":
        return cls.from_json(Path(path).read_text())

    @property
    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def replace(self, **changes) -> "JobSpec":
        return dataclasses.replace(self, **changes)

    # -- resolved objects --

    def constraint_set(self) -> ConstraintSet:
        return _strict(ConstraintSet, self.constraints, "constraints")

    def resolve_grid(self) -> SignalGrid:
        g = self.grid
        fs = g.sample_rate
        if fs is None:
            m = self.channels[0].modulation
            fs = g.num_samples * m.baud_rate / m.num_symbols
        try:
            return SignalGrid(g.num_samples, fs)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"grid: {exc}") from exc

    def modulation_specs(self) -> list[ModulationSpec]:
        out = []
        for j, ch in enumerate(self.channels):
            m = ch.modulation
            seed = m.data_seed
            if seed is None:
                seed = int(rng(self.seed, f"channels/{j}/data").raw(1)[0])
            try:
                out.append(ModulationSpec(m.format, m.baud_rate, m.rrc_rolloff, m.num_symbols,
                                          seed, True, m.max_zero_run))
            except ValueError as exc:
                raise ValidationError(f"channels[{j}].modulation: {exc}") from exc
        return out

    def optimizer_config(self) -> OptimizerConfig:
        o = self.optimizer
        try:
            return OptimizerConfig(o.max_iterations, o.tolerance, o.sweep_order,
                                   self.constraint_set(), True, o.step_size, o.init_amplitude,
                                   self.seed if o.seed is None else o.seed)
        except ValueError as exc:
            raise ValidationError(f"optimizer: {exc}") from exc

    def impairment_spec(self) -> ImpairmentSpec | None:
        imp = self.evaluation.impairments
        if imp is None:
            return None
        return _strict(ImpairmentSpec, imp, "evaluation.impairments")

    def dsp_config(self, j: int) -> DspConfig:
        if self.evaluation.dsp is not None:
            return _strict(DspConfig, self.evaluation.dsp, "evaluation.dsp")
        mod = self.channels[j].modulation
        if mod.format.upper() == "QPSK":
            return DspConfig(offset_power=4, cpe=True, symbol_rate_hz=mod.baud_rate)
        return DspConfig(offset_power=2, cpe=False, symbol_rate_hz=mod.baud_rate)

    def channel_bandwidth(self) -> float | None:
        if self.evaluation.channel_bandwidth_hz is not None:
            return self.evaluation.channel_bandwidth_hz
        offs = sorted(c.offset_hz for c in self.channels)
        if len(offs) < 2:
            return None
        return float(min(np.diff(offs)))

    def validate(self) -> None:
        """Check every cross-module invariant before any computation."""
        if not self.channels:
            raise ValidationError("at least one channel is required")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        if self.cascade.num_stages < 1:
            raise ValidationError("cascade.num_stages must be >= 1")
        grid = self.resolve_grid()
        self.cascade.filter.build()
        self.constraint_set()
        self.optimizer_config()
        specs = self.modulation_specs()
        offsets = [c.offset_hz for c in self.channels]
        if len(set(offsets)) != len(offsets):
            raise ValidationError("channel offsets must be distinct")
        for j, (ch, m) in enumerate(zip(self.channels, specs)):
            if ch.weight <= 0:
                raise ValidationError(f"channels[{j}].weight must be positive")
            try:
                m.check_grid(grid, ch.offset_hz)
            except ValueError as exc:
                raise ValidationError(f"channels[{j}]: {exc}") from exc
            cycles = ch.offset_hz / grid.frequency_spacing
            if len(self.channels) > 1 and abs(cycles - round(cycles)) > 1e-6:
                raise ValidationError(
                    f"channels[{j}]: offset {ch.offset_hz:g} Hz is not on a frequency bin "
                    f"(spacing {grid.frequency_spacing:g} Hz); lines would not be orthogonal")
        bw = self.channel_bandwidth()
        if bw is not None and any(m.occupied_bandwidth > bw for m in specs):
            raise ValidationError("channel bandwidth exceeds the channel spacing")
        imp = self.impairment_spec()
        if imp is not None and abs(imp.total_shift_hz) >= grid.nyquist:
            raise ValidationError("impairment frequency shift beyond Nyquist")
        for j in range(len(self.channels)):
            self.dsp_config(j)

    def output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        env = os.environ.get("TLF_OUT")
        if env:
            return Path(env) / self.name
        return Path(self.output.directory or Path("runs") / self.name)


# -- manifest -------------------------------------------------------------------

@dataclass
class RunManifest:
    name: str
    spec_hash: str
    tool_version: str
    kind: str
    timings_s: dict[str, float]
    files: dict[str, str]
    converged: bool | None
    iterations: int | None
    metrics: dict[str, Any]
    exit_code: int
    out_dir: Path | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        d["schema"] = SCHEMA
        return d


def _inventory(out_dir: Path) -> dict[str, str]:
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out_dir).as_posix()] = sha256_file(p)
    return files


# -- problem assembly ---------------------------------------------------------------

@dataclass
class Problem:
    grid: SignalGrid
    design0: CascadeDesign
    inputs: list[ComplexEnvelope]
    targets: list[ComplexEnvelope]
    symbols: list[np.ndarray]
    mods: list[ModulationSpec]


def build_problem(spec: JobSpec) -> Problem:
    grid = spec.resolve_grid()
    mods = spec.modulation_specs()
    offsets = [c.offset_hz for c in spec.channels]
    inputs = [ComplexEnvelope(grid, tone(grid, o) / np.sqrt(grid.num_samples)) for o in offsets]
    targets, symbols = [], []
    for m, o in zip(mods, offsets):
        env, sy = synthesize_target(m, grid, o)
        targets.append(env)
        symbols.append(sy)
    design0 = CascadeDesign.uniform(grid, spec.cascade.num_stages, spec.cascade.filter.build(),
                                    offsets, spec.cascade.trailing_filter)
    return Problem(grid, design0, inputs, targets, symbols, mods)


# -- evaluation ---------------------------------------------------------------------

@dataclass
class Evaluation:
    metrics: dict
    output: ComplexEnvelope
    combined_input: ComplexEnvelope
    planes: list[np.ndarray]
    constellations: list[np.ndarray]
    measured: list[ComplexEnvelope]
    xcorr: np.ndarray | None


def evaluate(spec: JobSpec, design: CascadeDesign, prob: Problem,
             input_override: ComplexEnvelope | None = None) -> Evaluation:
    """Quality metrics of ``design`` against the job's targets (deterministic)."""
    n = len(prob.inputs)
    weights = [c.weight for c in spec.channels]
    if input_override is not None:
        combined_in = input_override
    else:
        combined_in = combine_lines(prob.inputs, weights) if n > 1 else prob.inputs[0]
    out, trace = propagate_forward(combined_in, design, keep_trace=True)
    planes = [combined_in.samples] + [st[2].samples for st in trace.stages]

    per_out = [propagate_forward(x, design, keep_trace=False)[0].samples for x in prob.inputs]
    T = np.stack([t.samples for t in prob.targets])
    O = np.stack(per_out) @ T.conj().T

    bw = spec.channel_bandwidth()
    imp = spec.impairment_spec()
    impaired = inject_impairments(out, imp, seed=spec.evaluation.noise_seed) if imp else None

    channels, constellations, measured = [], [], []
    for j, (ch, m) in enumerate(zip(spec.channels, prob.mods)):
        if n > 1:
            meas = extract_channel(out, ch.offset_hz, bw)
            ref = extract_channel(prob.targets[j], ch.offset_hz, bw)
            mf_offset = 0.0
        else:
            meas, ref, mf_offset = out, prob.targets[j], ch.offset_hz
        q = waveform_correlation(meas, ref)
        rx = matched_filter_symbols(align(meas, q), m, mf_offset)
        evm, pts = evm_percent(rx, prob.symbols[j])
        entry = {
            "index": j,
            "offset_hz": ch.offset_hz,
            "correlation": q.correlation,
            "best_lag": q.best_lag,
            "best_phase": q.best_phase,
            "evm_percent": evm,
            "overlap_magnitude": float(abs(O[j, j])),
            "carrier_suppression_db": carrier_suppression_db(meas if n > 1 else out),
            "impaired_correlation": None,
        }
        if impaired is not None:
            meas_imp = extract_channel(impaired, ch.offset_hz, bw) if n > 1 else impaired
            if mf_offset:
                meas_imp = ComplexEnvelope(meas_imp.grid, meas_imp.samples * tone(meas_imp.grid, -mf_offset))
                ref_b = ComplexEnvelope(ref.grid, ref.samples * tone(ref.grid, -mf_offset))
            else:
                ref_b = ref
            rec = receiver_chain(meas_imp, ref_b, spec.dsp_config(j), imp.total_shift_hz)
            entry["impaired_correlation"] = waveform_correlation(rec, ref_b).correlation
        channels.append(entry)
        constellations.append(pts)
        measured.append(meas)

    metrics: dict[str, Any] = {
        "channels": channels,
        "min_correlation": min(c["correlation"] for c in channels),
        "trace_objective": float(abs(np.trace(O)) / n),
        "overlap_matrix": complex_matrix_to_json(O),
        "energy_error": abs(out.energy - combined_in.energy) / combined_in.energy,
        "carrier_suppression_db": carrier_suppression_db(out),
        "cross_correlation": None,
    }
    if impaired is not None:
        metrics["min_impaired_correlation"] = min(c["impaired_correlation"] for c in channels)
    xc = None
    if n > 1:
        xc = cross_correlation_matrix(measured)
        mean, std = _baseline(spec, prob, bw)
        off = xc[~np.eye(n, dtype=bool)]
        thr = mean + 3 * std
        metrics["cross_correlation"] = {
            "matrix": xc.tolist(),
            "baseline_mean": mean,
            "baseline_std": std,
            "threshold": thr,
            "max_off_diagonal": float(off.max()),
            "coupling_free": bool(off.max() < thr),
        }
    return Evaluation(metrics, out, combined_in, planes, constellations, measured, xc)


def _baseline(spec: JobSpec, prob: Problem, bw: float | None) -> tuple[float, float]:
    """Correlation floor between independent random waveforms of the job's format."""
    m0 = prob.mods[0]

    def make(s):
        seed = int(rng(spec.seed, f"baseline/{s}").raw(1)[0])
        env, _ = synthesize_target(dataclasses.replace(m0, data_seed=seed), prob.grid, 0.0)
        return extract_channel(env, 0.0, bw) if bw else env

    return random_correlation_baseline(make, spec.evaluation.baseline_trials)


# -- writers ----------------------------------------------------------------------------

def _write_eval_files(out_dir: Path, spec: JobSpec, prob: Problem, ev: Evaluation,
                      design: CascadeDesign, history=None) -> None:
    grid = prob.grid
    for d in ("fields", "data"):
        (out_dir / d).mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "metrics.json", ev.metrics)
    write_envelope(out_dir / "fields" / "input.tlf", ev.combined_input)
    write_envelope(out_dir / "fields" / "output.tlf", ev.output)
    for j, t in enumerate(prob.targets):
        write_envelope(out_dir / "fields" / f"target_ch{j + 1}.tlf", t)
        write_complex_points_csv(out_dir / "data" / f"symbols_ch{j + 1}.csv", prob.symbols[j])
        write_complex_points_csv(out_dir / "data" / f"constellation_ch{j + 1}.csv",
                                 ev.constellations[j], header=("re", "im"))
    t = grid.time_axis()
    f = grid.frequency_axis()
    if spec.output.stage_traces:
        _savetxt(out_dir / "data" / "stage_temporal.csv", ["stage", "time_s", "amplitude", "phase_rad"],
                 np.concatenate([np.column_stack([np.full(len(t), k), t, np.abs(x), np.angle(x)])
                                 for k, x in enumerate(ev.planes)]))
        order = np.argsort(f)
        rows = []
        for k, x in enumerate(ev.planes):
            p = np.abs(np.fft.fft(x, norm="ortho")) ** 2
            rows.append(np.column_stack([np.full(len(f), k), f[order],
                                         10 * np.log10(np.maximum(p[order], 1e-30))]))
        _savetxt(out_dir / "data" / "stage_spectra.csv", ["stage", "detuning_hz", "power_db"],
                 np.concatenate(rows))
    _savetxt(out_dir / "data" / "masks.csv",
             ["time_s"] + [f"stage_{k + 1}" for k in range(design.num_stages)],
             np.column_stack([t, design.masks.T]))
    if history is not None:
        _savetxt(out_dir / "data" / "convergence.csv", ["sweep", "objective"],
                 np.column_stack([np.arange(1, len(history) + 1), history]))
    if ev.xcorr is not None:
        _savetxt(out_dir / "data" / "xcorr_matrix.csv",
                 [f"ch{j + 1}" for j in range(len(ev.xcorr))], ev.xcorr)
    if spec.output.figures:
        fig = out_dir / "figures"
        plotting.plot_stage_evolution(t, ev.planes, f, fig / "stage_evolution.png")
        plotting.plot_masks(t, design.masks, fig / "masks.png")
        for j, pts in enumerate(ev.constellations):
            plotting.plot_constellation(pts, fig / f"constellation_ch{j + 1}.png",
                                        title=f"ch{j + 1}: {prob.mods[j].format}")
        if ev.xcorr is not None:
            plotting.plot_xcorr_matrix(ev.xcorr, fig / "xcorr_matrix.png")
        if history:
            plotting.plot_convergence(history, fig / "convergence.png")


def _savetxt(path: Path, header, data) -> None:
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.12g")


def _finish(out_dir: Path, manifest: RunManifest) -> RunManifest:
    manifest.files = _inventory(out_dir)
    manifest.out_dir = out_dir
    write_json(out_dir / "manifest.json", manifest.to_dict())
    return manifest


def _headline(metrics: dict) -> dict:
    keys = ("min_correlation", "trace_objective", "carrier_suppression_db", "min_impaired_correlation")
    h = {k: metrics[k] for k in keys if k in metrics}
    if metrics.get("cross_correlation"):
        h["max_off_diagonal"] = metrics["cross_correlation"]["max_off_diagonal"]
        h["coupling_free"] = metrics["cross_correlation"]["coupling_free"]
    return h


# -- entry points ----------------------------------------------------------------------------

def run_design(spec: JobSpec, out_dir=None) -> RunManifest:
    """Synthesize, optimize, evaluate and write every artifact of a job."""
    spec.validate()
    set_fft_workers(spec.threads)
    out = spec.output_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}

    t0 = time.perf_counter()
    prob = build_problem(spec)
    timings["synthesis"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    design, report = optimize(prob.inputs, prob.targets, prob.design0, spec.optimizer_config())
    timings["optimization"] = time.perf_counter() - t0
    log.info("%s: %d sweeps, objective %.6f, converged=%s", spec.name, report.iterations,
             report.final_trace_magnitude, report.converged)

    t0 = time.perf_counter()
    ev = evaluate(spec, design, prob)
    timings["evaluation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    (out / "job.json").write_text(spec.to_json())
    save_design(out, design)
    write_json(out / "report.json", {
        "schema": SCHEMA,
        "converged": report.converged,
        "iterations": report.iterations,
        "best_iteration": report.best_iteration,
        "history": list(report.history),
        "final_trace_magnitude": report.final_trace_magnitude,
        "stage_overlaps": [complex_matrix_to_json(m) for m in report.stage_overlaps],
    })
    _write_eval_files(out, spec, prob, ev, design, report.history)
    timings["output"] = time.perf_counter() - t0

    code = EXIT_OK if report.converged else EXIT_NOT_CONVERGED
    manifest = RunManifest(spec.name, spec.spec_hash, __version__, "design", timings, {},
                           report.converged, report.iterations, _headline(ev.metrics), code)
    return _finish(out, manifest)


def run_eval(design_path, spec: JobSpec, waveform_path=None, out_dir=None) -> RunManifest:
    """Re-evaluate a stored design under ``spec``'s metrics/impairments (no optimization)."""
    spec.validate()
    set_fft_workers(spec.threads)
    t0 = time.perf_counter()
    design = load_design(design_path)
    prob = build_problem(spec)
    if design.grid.num_samples != prob.grid.num_samples or design.grid.sample_rate != prob.grid.sample_rate:
        raise ValidationError("design grid does not match the job grid")
    if design.num_stages < 1:
        raise ValidationError("design has no stages")
    override = None
    if waveform_path is not None:
        override = read_envelope(waveform_path)
        if override.grid.num_samples != prob.grid.num_samples:
            raise FormatError("input waveform length does not match the design grid")
        override = ComplexEnvelope(prob.grid, override.samples)
    ev = evaluate(spec, design, prob, override)
    out = Path(out_dir) if out_dir is not None else spec.output_dir() / "eval"
    out.mkdir(parents=True, exist_ok=True)
    _write_eval_files(out, spec, prob, ev, design)
    manifest = RunManifest(spec.name, spec.spec_hash, __version__, "eval",
                           {"evaluation": time.perf_counter() - t0}, {}, None, None,
                           _headline(ev.metrics), EXIT_OK)
    return _finish(out, manifest)


# -- presets ----------------------------------------------------------------------------------

def preset_names() -> list[str]:
    files = resources.files("timelens").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".json"))


def load_preset(name: str) -> JobSpec:
    res = resources.files("timelens").joinpath("presets", f"{name}.json")
    if not res.is_file():
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return JobSpec.from_json(res.read_text())
