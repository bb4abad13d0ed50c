"""Run configuration shared by the CLI and the HTTP service.

Field defaults follow the published parameter choices: sufficient-decrease
constant 0.1, shape/scale weights 0.5/0.2, water weight factor 0.1, planar
boundary weight 1e-6, ten stages with distortion weight and stop threshold
shrinking tenfold per stage, interruption meridian at 169 degrees west.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field, field_validator, model_validator

Mode = Literal["plane", "sphere", "hybrid", "projection"]

__all__ = ["RunConfig", "ConfigError", "Mode"]


class ConfigError(ValueError):
    """Invalid run configuration."""


class RunConfig(BaseModel):
    """Everything a pipeline command needs; unset paths derive from out_dir."""

    # inputs / outputs
    regions: Path | None = None
    out_dir: Path = Path("out")
    mesh_path: Path | None = None
    portions_path: Path | None = None
    solve_path: Path | None = None

    # problem selection
    mode: Mode = "plane"
    projection: str = "mollweide"
    frequency: int = Field(default=32, ge=1)
    stages: int = Field(default=10, ge=1, le=20)

    # mesh subdivision rules
    subdivide: bool = True
    min_region_cover: int = Field(default=4, ge=1)
    max_area_fraction: float = Field(default=1.0 / 2048.0, gt=0)
    polar_cap_deg: float = Field(default=80.0, gt=0, lt=90)
    max_subdivision_depth: int = Field(default=8, ge=1)

    # cost weights
    shape_weight: float = Field(default=0.5, ge=0)
    scale_weight: float = Field(default=0.2, ge=0)
    water_factor: float = Field(default=0.1, ge=0)
    density_floor: float = Field(default=0.2, ge=0)
    density_slope: float = Field(default=0.8, ge=0)
    boundary_weight: float = Field(default=1e-6, ge=0)
    pole_weight: float = Field(default=1e3, ge=0)
    antimer_weight_north: float = Field(default=10.0, ge=0)
    antimer_weight_mid: float = Field(default=1.0, ge=0)
    antimer_weight_south: float = Field(default=0.0, ge=0)
    antimer_north_lat_deg: float = 45.0
    antimer_south_lat_deg: float = -60.0
    interruption_deg: float = -169.0

    # target-projection blur
    blur_lon_width_deg: float = Field(default=10.0, gt=0)
    blur_pole_width_deg: float = Field(default=5.0, gt=0)

    # solver
    armijo_c: float = Field(default=0.1, gt=0, lt=1)
    lbfgs_memory: int = Field(default=10, ge=1)
    weight_dist_start: float = Field(default=0.1, gt=0)
    grad_tol_start: float = Field(default=0.01, gt=0)
    stage_factor: float = Field(default=0.1, gt=0, lt=1)
    max_steps_per_stage: int = Field(default=200_000, ge=1)
    projection_ratios: tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    projection_land_factor: float = Field(default=100.0, gt=0)
    projection_grad_tol: float = Field(default=1e-3, gt=0)
    refine_fraction: float = Field(default=0.0, ge=0, le=0.5)

    # execution
    threads: int = Field(default=1, ge=1)
    verbose: bool = False
    timings: bool = False
    log_steps: bool = False
    mesh_overlay: bool = False
    graticule: bool = False

    @field_validator("projection")
    @classmethod
    def _known_projection(cls, v: str) -> str:
        from .projections import get_projection

        get_projection(v)  # raises with the valid choices listed
        return v

    @model_validator(mode="after")
    def _mode_consistency(self) -> "RunConfig":
        if self.mode == "plane" and self.boundary_weight < 0:
            raise ValueError("boundary_weight requires plane mode")
        return self

    # derived paths -----------------------------------------------------

    def path_mesh(self) -> Path:
        return self.mesh_path or self.out_dir / "mesh.json"

    def path_portions(self) -> Path:
        return self.portions_path or self.out_dir / "portions.json"

    def path_solve(self) -> Path:
        return self.solve_path or self.out_dir / "solve.json"

    def path_report_csv(self) -> Path:
        return self.out_dir / "report.csv"

    def path_report_json(self) -> Path:
        return self.out_dir / "report.json"

    def path_svg(self) -> Path:
        return self.out_dir / "map.svg"

    def path_geojson(self) -> Path:
        return self.out_dir / "map.geojson"

    def lon_offset_deg(self) -> float:
        """Rotation applied to input longitudes so the configured
        interruption meridian lands on the mesh antimeridian."""
        return -(self.interruption_deg + 180.0)
