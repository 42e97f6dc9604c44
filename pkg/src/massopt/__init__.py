"""Numerical mass optimization with convex costs.

Solves compliance minimization penalized by a convex cost functional on
measures: the auxiliary variational problem is minimized by a certified
first-order method, the optimal conductivity is recovered from
subdifferential optimality conditions, and every optimality condition is
verified numerically against the recovered measure.
"""

from .costs import (Conjugate, CostFunction, CostValidation, RecessionValue,
                    builtin_cost, conjugate_eval, expression_cost, linear_cost,
                    piecewise_polynomial_cost, power_cost, quadratic_cost,
                    recession_eval, reciprocal_cost, regularized_cost,
                    subdiff_interval, tabulated_cost, validate_cost)
from .errors import (AtomOutsideGrid, ConfigError, InadmissibleSource, InvalidCost,
                     MassOptError, NonMonotoneQuotient, NotConverged,
                     NumericOverflow, OutsideDomain, RegimeMismatch,
                     ScheduleTooShort, TooLarge, Unbounded, UnknownFixture,
                     UnsupportedGrid)
from .grids import (DiscreteMeasure, Grid, ScalarField, SourceTerm, VectorField,
                    divergence_weighted, gradient, interval_grid, pair_source,
                    radial_grid, read_field_csv, read_measure, rectangle_grid,
                    sphere_surface, write_field_csv, write_measure)
from .oracle import (ClosedFormFixture, brute_force_min, fixture, fixture_errors,
                     fixture_names)
from .recovery import (EnergyResult, OptimalityReport, RegularizationDiagnostics,
                       cost_eval, energy_eval, recover_density_sl,
                       recover_measure_l_1d, recover_via_regularization,
                       solution_like, verify_conditions)
from .solver import (AuxiliaryProblem, AuxiliarySolution, SolverParams,
                     build_problem, feasible_flux_1d, objective_eval,
                     objective_gradient, operator_norm, require_converged,
                     solve_auxiliary)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
