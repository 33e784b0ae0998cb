"""Simulation and numerical certification of tumor treatment orderings."""
from .models import (ConfigurationError, ContractViolation, DomainError, GrowthLaw, TumorModel,
                     GeneralModel, NortonSimon, MonroGaffney, BirthDeath, Mutation, CostMutation,
                     Grid, check_model_assumptions, mutation_compatibility, cost_ratio_threshold)
from .ode import IntegrationError, IntegratorConfig
from .policies import (Thresholds, NoTreat, ConstantDose, MTD, DelayedDose, DelayedMTD,
                       Containment, Intermittent, IdealMTD, DelayedIdealMTD, IdealContainment,
                       IdealIntermittent, Alternative, reference_policies, stabilizing_dose)
from .simulator import (TumorState, Trajectory, OutcomeMetrics, simulate, outcome_metrics,
                        first_crossing, locate_threshold_crossing)
from .rnplane import RNCurve, rn_trajectory, compare_curves, consistency_check

__all__ = [name for name in dir() if not name.startswith("_")]
