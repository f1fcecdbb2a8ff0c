"""
Configuration settings
"""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings and numerical defaults"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="FAULTFLOW_",
        case_sensitive=True,
        extra="ignore",
    )

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_JSON: bool = False

    # Geometry
    ANGLE_FLOOR_RAD: float = 1e-3
    RANK_RTOL: float = 1e-10
    # signature columns below this fraction of the stacked Jacobian norm are zero
    SIGNATURE_RTOL: float = 1e-6
    RELATIVE_DEGREE_TOL: float = 1e-8
    RELATIVE_DEGREE_MAX: int = 4
    JACOBIAN_STEP: float = 1e-6
    LIE_STEP: float = 1e-3

    # Observer
    GUARD_RADIUS: float = 1e3

    # Simulation
    U_FLOOR_NM: float = 1e-3


# Global settings instance
settings = Settings()

# Export commonly used variables
ANGLE_FLOOR_RAD = settings.ANGLE_FLOOR_RAD
RANK_RTOL = settings.RANK_RTOL
SIGNATURE_RTOL = settings.SIGNATURE_RTOL
RELATIVE_DEGREE_TOL = settings.RELATIVE_DEGREE_TOL
RELATIVE_DEGREE_MAX = settings.RELATIVE_DEGREE_MAX
JACOBIAN_STEP = settings.JACOBIAN_STEP
LIE_STEP = settings.LIE_STEP
GUARD_RADIUS = settings.GUARD_RADIUS
U_FLOOR_NM = settings.U_FLOOR_NM
