"""Lensless imaging with a bare image sensor, fully simulated.

Point sources cast space-variant patterns on a sensor with no optics; a
calibration matrix of those patterns is inverted with SVD-based Tikhonov
regularization to recover the scene.
"""

from .calibration import (
    CalibrationMatrix,
    CalibrationStack,
    PixelMask,
    apply_mask,
    calibrate,
    calibrate_stack,
    estimate_fov,
    load_calibration,
    save_calibration,
    shadow_mask,
)
from .errors import ConfigError, DimensionError, FormatError, LenslessError, NumericalError
from .optics import (
    DustScatterer,
    Frame,
    OpticsConfig,
    SensorSpec,
    capture_averaged,
    desk_config,
    expose,
    full_sensor_config,
    render_psf,
    render_psfs,
    render_scene,
    shadow_center,
)
from .scene import SceneVector, SourceGrid, VideoSequence, coords_of, index_of, make_pattern, make_video, source_position_mm
from .solver import (
    Reconstructor,
    SVDFactors,
    build_reconstructor,
    condition_number,
    reconstruct,
    refocus,
    select_alpha,
    svd,
    tikhonov_solve,
)

__version__ = "0.1.0"
