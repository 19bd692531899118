"""Acceptance-criterion bookkeeping.

Tests marked ``@pytest.mark.criterion(n)`` receive a ``criterion`` fixture
on which they record named checks.  After the run one PASS/FAIL line is
printed per criterion; a criterion passes only if every test carrying its
marker passed and every recorded check held.  A criterion whose tests were
never run prints FAIL.
"""

import pytest

CRITERIA = {
    1: "sparsity-probability formula",
    2: "kernel oracle equivalence",
    3: "discount-volatility degeneracy",
    4: "decomposition identities",
    5: "recovery study (Model M)",
    6: "nesting and model comparison",
    7: "impulse-response linear oracle",
    8: "joint-correctness test on the tiny instance",
    9: "end-to-end determinism",
}

_CHECKS: dict[int, list] = {n: [] for n in CRITERIA}
_OUTCOMES: dict[int, list] = {n: [] for n in CRITERIA}


class Criterion:
    def __init__(self, number: int):
        self.number = number

    def check(self, label: str, ok, detail: str = "") -> bool:
        ok = bool(ok)
        _CHECKS[self.number].append((label, ok, detail))
        return ok

    def verdict(self) -> None:
        mine = _CHECKS[self.number]
        failed = [f"{lab} ({det})" if det else lab for lab, ok, det in mine if not ok]
        assert mine, "no checks recorded"
        assert not failed, "; ".join(failed)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


def _number(item):
    mark = item.get_closest_marker("criterion")
    return None if mark is None else int(mark.args[0])


@pytest.fixture
def criterion(request):
    n = _number(request.node)
    if n is None:
        raise RuntimeError("the criterion fixture needs @pytest.mark.criterion(n)")
    return Criterion(n)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    n = _number(item)
    if n is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _OUTCOMES[n].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not any(_OUTCOMES.values()):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        checks = _CHECKS[n]
        ok = bool(_OUTCOMES[n]) and all(_OUTCOMES[n]) and all(c[1] for c in checks)
        failed = [f"{lab} ({det})" if det else lab for lab, good, det in checks if not good]
        if not _OUTCOMES[n]:
            failed = ["not run"]
        elif not failed and not all(_OUTCOMES[n]):
            failed = ["test error"]
        tail = f" [failed: {'; '.join(failed)}]" if failed else ""
        tr.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} "
                      f"({sum(c[1] for c in checks)}/{len(checks)} checks){tail}")
