"""Optimal execution with transient impact in the small instantaneous-impact limit."""

from ._kernels import BACKEND
from .coeffs import (CoefficientField, LimitCoefficients, PreLimitCoefficients, SolverFault, closed_form_B0,
                     closed_form_limit, solve_B0_deterministic, solve_B0_pde, solve_prelimit_deterministic,
                     solve_prelimit_pde)
from .costs import (CostBreakdown, cost_eta, cost_semimartingale, first_order_check, first_order_formula,
                    perturbation_battery)
from .graphs import CompletedGraph, ConvergenceReport, completed_graph, convergence_study, hausdorff
from .limit import LimitState, LimitStrategy, build_limit_state, decompose_limit_strategy
from .model import (FactorModel, ModelError, ModelParams, constant_factor, lambda_prop_rho_factor, make_factor,
                    sine_factor, validate)
from .pathsim import PathBundle, SampledPath, TimeGrid, simulate_paths
from .statesim import IntegrationFault, PreLimitState, integrate_state, integrate_states
from .strategies import RateStrategy, SemimartingaleStrategy, mollify, tracker

__version__ = "0.1.0"
