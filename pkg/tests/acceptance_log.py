"""Outcome registry for the acceptance criteria, printed at session end."""

RESULTS = {}


def record(key, ok, detail):
    RESULTS[key] = (bool(ok), detail)
    assert ok, detail
