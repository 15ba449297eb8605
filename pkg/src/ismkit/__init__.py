"""Toolkit for simulating and reconstructing detector-array scanning
microscopy data: PSF models, forward simulation, pixel reassignment,
multi-image Richardson-Lucy deconvolution, and factor-two resampling."""

from .analysis import (
    GaussianFit,
    RadialSpectrum,
    fit_gaussian_profile,
    measure_shift,
    radial_spectrum,
)
from .optics import (
    DetectorMap,
    Fingerprint,
    OpticalConfig,
    PsfStack,
    ScanGrid,
    ShiftVectors,
    detection_psf,
    emission_psf,
    excitation_psf,
    fingerprint_from_psf,
    make_detector_map,
    overlap_ratio,
    psf_stack,
    shift_vectors_from_psf,
)
from .reconstruct import (
    Correlogram,
    ReconOutput,
    apr,
    correlogram,
    estimate_shifts,
    fingerprint_from_data,
    negative_log_likelihood,
    rl_deconvolve,
    sum_image,
)
from .resample import (
    SamplingReport,
    check_sampling_condition,
    downsample,
    select_central_ring,
    upsampled_reconstruct,
    zero_upsample,
)
from .simulate import (
    BackgroundModel,
    IsmDataset,
    Phantom,
    add_poisson,
    forward,
    forward_with_background,
    make_phantom,
    phantom_from_array,
    phantom_from_file,
)
from . import container

__version__ = "0.1.0"
