"""Run configuration shared by the pipeline, harness, and CLI."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .align import RansacConfig
from .encoder import EncoderSpec

DEFAULT_PROCESSING_MPP = 1.0
DEFAULT_OUTPUT_MPP = 0.25
DEFAULT_PATCH_SIZE = 224
DEFAULT_NEIGHBORHOOD = 3
DEFAULT_SEED = 42
DEFAULT_MAX_CANVAS_PIXELS = 2_000_000_000


@dataclass
class RunConfig:
    """All pipeline knobs with the paper-derived defaults.

    ``stride`` defaults to half the patch size (half-patch overlap); it is
    resolved lazily so changing ``patch_size`` keeps the coupling.
    """

    processing_mpp: float = DEFAULT_PROCESSING_MPP
    output_mpp: float = DEFAULT_OUTPUT_MPP
    patch_size: int = DEFAULT_PATCH_SIZE
    stride: int | None = None
    neighborhood: int = DEFAULT_NEIGHBORHOOD
    encoder: EncoderSpec = field(default_factory=EncoderSpec.baseline)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    seed: int = DEFAULT_SEED
    min_component_area: int = 1024
    max_canvas_pixels: int = DEFAULT_MAX_CANVAS_PIXELS
    threads: int = 1

    def __post_init__(self) -> None:
        for name in ("processing_mpp", "output_mpp"):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be > 0")
        if self.patch_size < 2:
            raise ValueError("patch_size must be >= 2")
        if self.stride is not None and self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.neighborhood < 0:
            raise ValueError("neighborhood must be >= 0")

    @property
    def effective_stride(self) -> int:
        return self.patch_size // 2 if self.stride is None else self.stride

    def with_updates(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)

    def to_manifest_dict(self) -> dict:
        """Deterministic JSON-ready summary recorded in stitch manifests."""
        return {
            "processing_mpp": self.processing_mpp,
            "output_mpp": self.output_mpp,
            "patch_size": self.patch_size,
            "stride": self.effective_stride,
            "neighborhood": self.neighborhood,
            "encoder": {"kind": self.encoder.kind, "K": self.encoder.K},
            "ransac": {
                "inlier_threshold": self.ransac.inlier_threshold,
                "max_iterations": self.ransac.max_iterations,
                "sample_size": self.ransac.sample_size,
                "min_inliers": self.ransac.min_inliers,
                "seed": self.ransac.seed,
            },
            "min_component_area": self.min_component_area,
        }


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config file into a flat dict of overrides."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError("config file must contain a JSON object")
    return data
