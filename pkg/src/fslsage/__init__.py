"""Desk-scale simulator of federated split learning with auxiliary gradient estimators."""
from .numcore import ConfigurationError, MLPSpec, ParamVector
from .models import SplitSpec, ModelBundle, build_bundle, compose, decompose
from .config import RunConfig
from .metrics import CommLedger, MetricsRow
from .protocol import run_fsl_sage
from .baselines import run_cse_fsl, run_fedavg, run_splitfed, simulate

__all__ = [
    "ConfigurationError", "MLPSpec", "ParamVector", "SplitSpec", "ModelBundle",
    "build_bundle", "compose", "decompose", "RunConfig", "CommLedger", "MetricsRow",
    "run_fsl_sage", "run_fedavg", "run_splitfed", "run_cse_fsl", "simulate",
]
