"""Dense NLP machinery: QP subproblems, block NLPs, Gauss-Newton SQP."""

from .nlp import (  # noqa: F401
    COMPL,
    EQ,
    INEQ,
    RESIDUAL,
    AssemblyError,
    Block,
    NlpInstance,
    VariableLayout,
    assemble,
    check_derivatives,
    jacobian_sparsity,
    linear_block,
)
from .qp import QpSolution, qp_kkt_residuals, solve_qp  # noqa: F401

# the spec-facing name for the dense QP subproblem call
solve_qp_subproblem = solve_qp

from .sqp import (  # noqa: F401,E402
    CONVERGED,
    DIVERGED,
    INFEASIBLE_QP,
    MAX_ITER,
    SolveReport,
    SqpSettings,
    SqpWorkspace,
    nlp_kkt_residuals,
    solve_sqp,
)
