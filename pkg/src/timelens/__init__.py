"""Cascaded time-lens waveform synthesis by wavefront matching."""

__version__ = "0.1.0"

from .dsp import DspConfig, ImpairmentSpec, receiver_chain, waveform_correlation  # noqa: E402
from .envelope import ComplexEnvelope, GridMismatchError, SignalGrid  # noqa: E402
from .optimizer import (ConstraintSet, OptimizerConfig, OverlapReport, optimize,  # noqa: E402
                        optimize_multi, optimize_single)
from .propagation import (CascadeDesign, PhaseMask, SpectralFilter,  # noqa: E402
                          propagate_backward, propagate_forward)
from .targets import ModulationSpec, synthesize_target  # noqa: E402

__all__ = [
    "CascadeDesign", "ComplexEnvelope", "ConstraintSet", "DspConfig", "GridMismatchError",
    "ImpairmentSpec", "ModulationSpec", "OptimizerConfig", "OverlapReport", "PhaseMask",
    "SignalGrid", "SpectralFilter", "optimize", "optimize_multi", "optimize_single",
    "propagate_backward", "propagate_forward", "receiver_chain", "synthesize_target",
    "waveform_correlation", "__version__",
]
