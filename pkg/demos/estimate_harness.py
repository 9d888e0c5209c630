"""Run the estimate harness on the square and simplex and print the ledger."""

from abreu_lab.estimates import HARNESS, Case, ledger_csv
from abreu_lab.polytope import standard_simplex, unit_square

hs = [1 / 32, 1 / 64]
for name, p in (("square", unit_square()), ("simplex", standard_simplex())):
    reports = [fn(Case(p), hs) for fn in HARNESS.values()]
    print(f"== {name}")
    for rep in reports:
        print(f"{rep.item:8s} {rep.verdict}")
    print(ledger_csv(reports))
