"""
Typed configuration for the pencil toolkit.

Values come from (lowest to highest priority) the defaults below, `PENCIL_*`
environment variables (a `.env` file is loaded first), the `tolerances:` block of a pencil
file and finally command line flags.
"""
from __future__ import annotations
from functools import lru_cache
from typing import Any

from dotenv import load_dotenv
from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from pencil_canon.errors import PencilFileError

# Load environment variables
load_dotenv()


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PENCIL_", extra="ignore")

    # Sampling
    grid_points: int = Field(9, ge=3)
    workers: int = Field(1, ge=1)

    # Dense kernels
    rank_rtol: float | None = Field(None, gt=0)  # None -> n * 2**-40
    snap_rtol: float = Field(1e-9, gt=0)
    cluster_tol: float = Field(1e-6, gt=0)
    imag_tol: float = Field(1e-7, gt=0)
    root_capture: float = Field(1e-2, gt=0)
    root_noise_floor: float = Field(1e-10, gt=0)

    # Profile and shift
    separation_tol: float = Field(1e-4, gt=0)
    regularity_rtol: float = Field(1e-10, gt=0)

    # Canonization
    spectral_gap_tol: float = Field(1e-3, gt=0)
    eig_tol: float = Field(1e-7, gt=0)
    cond_limit: float = Field(1e8, gt=0)
    canon_rtol: float = Field(1e-8, gt=0)

    # Verification
    unitary_tol: float = Field(1e-10, gt=0)
    similarity_tol: float = Field(1e-9, gt=0)
    continuity_factor: float = Field(8.0, gt=0)

    log_level: str = "INFO"

    def rank_tol(self, n: int) -> float:
        return self.rank_rtol if self.rank_rtol is not None else n * 2.0 ** -40

    def canon_tol(self, norm_a: float, norm_b: float) -> float:
        return self.canon_rtol * (1.0 + norm_a + norm_b)

    def regularity_tol(self, norm_a: float) -> float:
        return self.regularity_rtol * max(1.0, norm_a)

    def with_overrides(self, overrides: dict[str, Any] | None) -> Settings:
        """Validated copy with the given fields replaced; None values are ignored"""
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        if not overrides:
            return self
        data = self.model_dump()
        for key, value in overrides.items():
            if key not in data:
                raise PencilFileError(f"Unknown tolerance or setting {key!r}")
            data[key] = value
        try:
            return Settings(**data)
        except ValidationError as e:
            raise PencilFileError(f"Invalid settings override: {e}") from e

    def echo(self) -> dict[str, Any]:
        """Tolerances as surfaced in reports"""
        return self.model_dump(exclude={"log_level", "workers"})


@lru_cache
def get_settings() -> Settings:
    return Settings()
