from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator

from resphys.errors import MaterialError


def lame_parameters(youngs_modulus: float, poissons_ratio: float) -> tuple[float, float]:
    """Convert (E, nu) to the Lame parameters (mu, lambda)."""
    if not -1.0 < poissons_ratio < 0.5:
        raise MaterialError(f"Poisson's ratio must lie in (-1, 0.5), got {poissons_ratio}")
    if youngs_modulus <= 0:
        raise MaterialError(f"Young's modulus must be positive, got {youngs_modulus}")
    mu = youngs_modulus / (2.0 * (1.0 + poissons_ratio))
    lam = youngs_modulus * poissons_ratio / ((1.0 + poissons_ratio) * (1.0 - 2.0 * poissons_ratio))
    return mu, lam


class Material(BaseModel):
    """Isotropic corotational linear elastic material."""

    model_config = ConfigDict(frozen=True)

    youngs_modulus: float = Field(gt=0, description="Young's modulus E [Pa]")
    poissons_ratio: float = Field(gt=-1.0, lt=0.5, description="Poisson's ratio nu [-]")
    density: float = Field(1070.0, gt=0, description="Mass density rho [kg/m^3]")

    @model_validator(mode="after")
    def _check_lame(self) -> "Material":
        lame_parameters(self.youngs_modulus, self.poissons_ratio)
        return self

    @property
    def lame_mu(self) -> float:
        return lame_parameters(self.youngs_modulus, self.poissons_ratio)[0]

    @property
    def lame_lambda(self) -> float:
        return lame_parameters(self.youngs_modulus, self.poissons_ratio)[1]

    def with_elasticity(self, youngs_modulus: float, poissons_ratio: float) -> "Material":
        """Same density, new (E, nu); used by system identification."""
        return Material(
            youngs_modulus=youngs_modulus, poissons_ratio=poissons_ratio, density=self.density
        )
