"""Two-step suspected-patch anomaly detection for images.

Typical use::

    from anosups import synth, train, TrainConfig, calibrate, detect

    model = train(TrainConfig(epochs=600, learning_rate=2e-3), "attention", normal_images)
    profile = calibrate(model, calibration_images, k=2, seed=0)
    report = detect(model, profile, test_image, mode="two-step", seed=0)
"""
from .calibration import CalibrationProfile, calibrate, upper_quantile
from .detector import DetectionReport, detect
from .image import PatchGrid, mask_patches, partition_patches, patchify, unpatchify
from .metrics import dice
from .reconstructor import ReconstructorModel, TrainConfig, load_model, reconstruct_patches, save_model, train

__all__ = [
    "CalibrationProfile", "DetectionReport", "PatchGrid", "ReconstructorModel", "TrainConfig",
    "calibrate", "detect", "dice", "load_model", "mask_patches", "partition_patches", "patchify",
    "reconstruct_patches", "save_model", "train", "unpatchify", "upper_quantile",
]
__version__ = "0.1.0"
