"""bcdiup: simulation and sparse-recovery toolkit for high-energy Bragg CDI.

The package simulates ground-truth diffraction volumes from model
nanocrystals, models coarse-pixel measurement with sub-pixel detector
translations, recovers finely pixelated slices by l1 optimization in the
cosine basis, scores recovery fidelity, derives experiment-design tables,
and phase-retrieves recovered volumes back to real-space crystals.
"""

__version__ = "0.1.0"

from .crystal import (
    CrystalSpec,
    IntensityVolume,
    PhaseModel,
    build_crystal,
    ground_truth_intensity,
    patterson_nyquist_check,
)
from .detector import (
    BinningOperator,
    DetectorGeometry,
    MeasurementSet,
    bin_slice,
    central_roi,
    count_unique_constraints,
    constraint_ratio,
    design_tables,
    diagonal_geometry,
    distance_multiplier,
    enumerate_diagonal_offsets,
    max_distance_multiplier,
    measure_slice,
)
from .metrics import SrtfReport, srtf_map, srtf_sweep
from .phasing import (
    Recipe,
    RetrievalState,
    Stage,
    er_step,
    hio_step,
    modulus_project,
    register_and_compare,
    run_recipe,
    sf_step,
    shrinkwrap,
)
from .recovery import (
    RecoveryConfig,
    SparseSolution,
    estimate_sparsity,
    feasibility_threshold,
    lasso_solve,
    recover_slice,
    recover_volume,
)
from .transforms import (
    Spectrum2D,
    dct2,
    fft3_centered,
    idct2,
    ifft3_centered,
    project,
    verify_projection_slice,
)
