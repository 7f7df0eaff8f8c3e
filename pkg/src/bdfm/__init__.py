"""Bayesian dynamic flow models for count flows on networks.

Decoupled gamma-beta discount Poisson filters per flow series, recoupled
into multinomial transition probabilities, with Bayes-factor monitoring,
grid selection of discount factors and a gravity-model decomposition of
sampled rates.
"""

from .core import FilterRecord, FlowFrame, GammaState, NetworkSpec, derive_occupancies
from .dgm import GravityEmulator, build_mask, credible_values, map_to_dgm
from .discount_select import DiscountGrid, DiscountSelector, select_discount
from .exceptions import FlowModelError
from .gbdm import (
    DiscountSchedule,
    GammaPoissonFilter,
    SeriesFilter,
    backward_sample,
    filter_series,
    log_predictive,
)
from .io import RunConfig, ingest_flows, load_config
from .monitor import MonitorConfig, protocol_step
from .netflow import DynamicFlowModel, NetworkModel, recouple_theta
from .pipeline import run_pipeline
from .simgen import ScenarioSpec, brute_force_filter, simulate

__version__ = "0.1.0"
