"""Scalar curvature of the canonical potentials and agreement of the four operator forms.

The unit square has constant scalar curvature 4 and the standard simplex 6.
The four discretisations of the weighted operator agree up to truncation
error, so their mutual discrepancy shrinks like h^2.  The forms that
difference the singular field F are least accurate next to the boundary,
so values are shown from band 4 inward.
"""

import numpy as np

from abreu_lab.geometry import guillemin_potential
from abreu_lab.grid import build_grid
from abreu_lab.operator import FORMS, OperatorContext, equivalence_report
from abreu_lab.polytope import standard_simplex, unit_square

for name, p, exact in (("square", unit_square(), 4), ("simplex", standard_simplex(), 6)):
    ctx = OperatorContext(guillemin_potential(p, build_grid(p, 1 / 64)))
    for form, fn in FORMS.items():
        s = fn(ctx).restrict(4)
        print(f"{name:8s} {form:5s} max |S - {exact}| = "
              f"{np.max(np.abs(s.vector() - exact)):.2e}")

print()
for D in ("1", "exp(xi1)", "1 + xi1*xi2/4"):
    rep = equivalence_report(unit_square(), D, [1 / 32, 1 / 64, 1 / 128])
    print(f"D = {D:14s} discrepancies {[f'{r.max_discrepancy:.2e}' for r in rep.rows]}"
          f"  order {rep.fitted_order:.2f}")
