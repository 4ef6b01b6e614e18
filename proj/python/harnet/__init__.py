"""HARNet angiogram reconstruction."""

from ._core import (
    Angiogram,
    HarnetError,
    Model,
    ModelSpec,
    bilateral,
    combined_loss,
    connectivity,
    evaluate_image,
    frangi_vesselness,
    gabor_enhance,
    generate_pair,
    load_checkpoint,
    load_image,
    max_inscribed_rect,
    median_filter,
    noise_intensity,
    normalize_unit,
    otsu_threshold,
    register_images,
    rms_contrast,
    run_cli,
    save_image,
    ssim,
    to_raw255,
    to_unit,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
