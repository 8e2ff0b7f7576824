"""Every acceptance criterion at its stated tolerance, one pass/fail line each."""

import pytest

from trilinear_cim.acceptance import CHECKS, check_fused_equivalence


@pytest.mark.parametrize("check", CHECKS, ids=lambda c: c.__name__.removeprefix("check_"))
def test_criterion(check, acceptance_log):
    res = check()
    print(res.line())
    acceptance_log.append(res.line())
    assert res.passed, res.line()


def test_fault_injection_is_detected(acceptance_log):
    res = check_fused_equivalence(n_jobs=20, eta_error=1.01)
    acceptance_log.append("fault injection (eta x1.01, expected FAIL): " + res.line())
    assert not res.passed
