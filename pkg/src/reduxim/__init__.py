"""reduxim: discrete-event Monte-Carlo simulation of single-quantum
wavepacket propagation with threshold-triggered contraction."""

__version__ = "0.1.0"

from .reduction import (
    ALPHA_S,
    Cluster,
    CriterionParams,
    OutcomeKind,
    ReductionOutcome,
    apply_reduction,
    overlap,
    overlap_condition,
    phase_match,
    reduce_partner,
    sample_first_match,
)
from .wavepacket import (
    Branch,
    EntangledPair,
    Packet,
    PhaseConstant,
    Polarization,
    Species,
    SpreadingParams,
    phase_space_separated,
    renormalize,
    spread_length,
    total_weight,
)
from .optics import (
    BeamSplitter,
    Chopper,
    CircuitGraph,
    Detector,
    Mirror,
    ObjectAbsorber,
    PartialFoil,
    PhaseShifter,
    Sink,
    Source,
    TrialResult,
    run_trial,
    set_choice,
    split,
    superpose,
)
from .experiments import (
    BornScreenResult,
    DelayedChoiceResult,
    EnsembleStats,
    EntangledScanResult,
    InterferenceScan,
    ScenarioConfig,
    UnsupportedTopology,
    classical_oracle,
    resolve_workers,
    run_born_screen,
    run_delayed_choice,
    run_elitzur_vaidman,
    run_entangled_delayed_choice,
    run_fig1,
    run_partial_absorption,
    run_spreading,
    run_visibility,
)
from .stats import (
    SeededStream,
    TrialStream,
    binomial_stderr,
    chi_square,
    derive_stream,
    fit_fringe,
)
