"""Space-time first-order-system least-squares solvers for parabolic PDEs."""

from .fem import FESpace, build_space, evaluate_fe, integrate
from .fosls import (FOSLSProblem, assemble_fosls, assemble_u_gram,
                    heat_problem, residual_estimator, solve_fosls)
from .mesh import (SpaceTimeMesh, TensorGrid, build_moving_domain_mesh,
                   build_unit_cylinder_mesh, classify_boundary, import_text,
                   refine_uniform, unit_tensor_grid)
from .moving_domain import (build_moving_case, solve_moving,
                            verify_piola_identities)
from .optimal_control import (ControlProblem, ControlSpace,
                              build_manufactured_case, control_error_report,
                              efficient_estimator, reliable_bound_terms,
                              solve_control)
from .reduced_basis import (SeparableParabolicProblem, benchmark_problem,
                            benchmark_truth_space, best_truth_error,
                            expand_forms, greedy_offline, load_model)

__version__ = "0.1.0"
