"""Active Gaussian-process emulation (single and multi-output)."""

from .annealing import AnnealConfig, anneal
from .emulator import (
    EmulationRecord,
    EmulatorConfig,
    EmulatorState,
    Interpolator,
    StopRule,
    acquisition,
    diversity,
    fit_state,
    geometry,
    initial_state,
    maximize_acquisition,
    run,
    step,
    stopping_distance,
    tempering,
    truth_error,
)
from .oracles import (
    ATMOS_INITIAL_NODES,
    BUILTIN,
    TOY_INITIAL_NODES,
    Oracle,
    OracleError,
    ProcessOracle,
    make_oracle,
)
from .sampling import KINDS, LHC, RANDOM, SEQ_LHC, SOBOL, baseline_samplers
