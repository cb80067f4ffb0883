from pydantic import validator, Field
from pydantic_settings import BaseSettings
from typing import Dict, Any
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

class Settings(BaseSettings):
    """Library and experiment configuration settings"""

    # Logging
    log_level: str = Field('INFO')
    log_format: str = Field('default')
    log_dir: str = Field('logs')

    # Numerical tolerances
    eq_tol: float = Field(1e-6)
    ineq_tol: float = Field(1e-6)
    invertibility_tol: float = Field(1e-8)
    cholesky_jitter: float = Field(1e-12)
    dykstra_tol: float = Field(1e-9)
    dykstra_max_iter: int = Field(10000)
    active_set_max_iter: int = Field(500)
    oracle_max_ineq: int = Field(12)

    # Network and optimizer defaults
    learning_rate: float = Field(1e-3)
    hidden_width: int = Field(200)
    hidden_layers: int = Field(2)

    # Baselines
    soft_lambda_ineq: float = Field(10.0)
    soft_lambda_eq: float = Field(10.0)
    dc3_steps: int = Field(10)
    dc3_lr: float = Field(1e-2)

    # Safe control
    cbf_kappa: float = Field(1.0)
    cbf_alpha: float = Field(1.0)
    unicycle_axis_offset: float = Field(0.1)

    # Output
    deterministic_csv: bool = Field(True)
    slow_operation_seconds: float = Field(1.0)

    @validator('log_level')
    def validate_log_level(cls, v):
        v = v.upper()
        if v not in ['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']:
            raise ValueError('Log level must be DEBUG, INFO, WARNING, ERROR or CRITICAL')
        return v

    @validator('log_format')
    def validate_log_format(cls, v):
        if v not in ['default', 'json']:
            raise ValueError('Log format must be default or json')
        return v

    @validator('eq_tol', 'ineq_tol', 'invertibility_tol', 'cholesky_jitter', 'dykstra_tol', 'learning_rate', 'dc3_lr')
    def validate_positive(cls, v):
        if v <= 0:
            raise ValueError('Tolerances and step sizes must be positive')
        return v

    @validator('soft_lambda_ineq', 'soft_lambda_eq')
    def validate_nonnegative(cls, v):
        if v < 0:
            raise ValueError('Penalty weights must be nonnegative')
        return v

    @validator('hidden_width', 'dykstra_max_iter', 'active_set_max_iter')
    def validate_at_least_one(cls, v):
        if v < 1:
            raise ValueError('Value must be at least 1')
        return v

    @validator('cbf_kappa', 'cbf_alpha', 'unicycle_axis_offset')
    def validate_cbf_gain(cls, v):
        if v <= 0:
            raise ValueError('CBF gains and axis offset must be positive')
        return v

    def config_items(self) -> Dict[str, Any]:
        """Flatten settings for the config echo"""
        return {f"settings.{k}": v for k, v in self.model_dump().items()}

    class Config:
        env_prefix = 'HARDNET_'
        env_file = '.env'
        case_sensitive = False
        extra = 'ignore'  # Ignore extra fields from environment

# Global settings instance
settings = Settings()
