"""bnnsca: power side-channel simulation and image-recovery toolkit for a
binarized CNN accelerator with an on-chip delay-line voltage sensor."""

__version__ = "0.1.0"

from .activity import (
    ActivityModelConfig,
    LineBufferState,
    PowerTrace,
    foreground_cycle_set,
    simulate_first_kernel_trace,
    step_line_buffer,
)
from .bnn import (
    BnnModel,
    batch_norm,
    conv2d_binary_layer,
    conv2d_first_layer,
    fully_connected,
    generate_random_model,
    infer,
    load_model,
    max_pool_2x2,
    save_model,
    sign_nonlinearity,
)
from .datasets import (
    Image,
    PixelPerturbation,
    load_idx_images,
    load_idx_labels,
    perturb,
    read_pgm,
    synthetic_digit,
    synthetic_digit_set,
    synthetic_garment,
    write_pgm,
)
from .metrics import SimilarityReport, ccr, ccr_norm, mssim, similarity_report
from .pipeline import (
    RecoveredImage,
    TraceImageReconstructor,
    average_traces,
    build_histogram,
    highpass_butterworth,
    highpass_running_mean,
    reconstruct_binary,
    rof_denoise,
    run_attack,
    select_threshold,
)
from .sensor import (
    BOARD_PRESETS,
    PLACEMENT_ATTENUATION,
    EnvelopeSpec,
    SensorConfig,
    TdcTrace,
    board_config,
    calibrate,
    capture_runs,
    capture_runs_from_power,
    sample_tdc,
    voltage_drop,
)
