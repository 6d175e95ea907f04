"""Shared pass/fail record for the acceptance criteria, printed at the end of the run."""

RESULTS = {}


def record(num, ok, detail):
    RESULTS[num] = (bool(ok), detail)
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok
