"""
Certifying the linear design
============================

Find ``P > 0`` making the case-study matrix inequality negative
semidefinite, then check a candidate that fails.
"""

import numpy as np

from etestim import case_study_lmi, solve_P, verify_lmi

pb = case_study_lmi()

# A + L C must be Hurwitz for any P to exist.
print("max Re eig(A + LC):", np.linalg.eigvals(pb.A + pb.Lgain @ pb.C).real.max())

sol = solve_P(pb)
rep = sol.report
print("feasible:", rep.feasible)
print(f"max eigenvalue {rep.max_eigenvalue:.3e} (tolerance {rep.tolerance:.3e})")
print("eig(P):", np.round(np.linalg.eigvalsh(sol.P), 4))

# The identity is not a certificate.
print("P = I gives max eigenvalue", verify_lmi(pb, np.eye(6)).max_eigenvalue)
