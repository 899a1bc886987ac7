"""Release gate: every check in the invariant suite must pass.

Each test runs one named check, prints its one-line verdict, and asserts the
pass flag.  The same suite backs the `fractalfields verify` subcommand, so a
green run here matches a zero exit there.
"""

from fractalfields import acceptance


def run(check):
    result = check()
    print(f"{'PASS' if result.passed else 'FAIL'}  {result.name}: {result.detail}")
    assert result.passed, result.detail


def test_renormalization_exactness():
    run(acceptance.check_renormalization)


def test_carre_du_champ_identity():
    run(acceptance.check_carre_du_champ)


def test_energy_measure_total_mass():
    run(acceptance.check_total_mass)


def test_gradient_isometry():
    run(acceptance.check_gradient_isometry)


def test_direct_integral_isometry():
    run(acceptance.check_direct_integral)


def test_kusuoka_structure():
    run(acceptance.check_kusuoka_structure)


def test_product_rule_functional():
    run(acceptance.check_product_rule)


def test_p_laplace_solver_oracles():
    run(acceptance.check_p_laplace_solver)


def test_coefficient_condition_probes():
    run(acceptance.check_coefficient_conditions)


def test_spde_integrator_order_contraction_reproducibility():
    run(acceptance.check_spde_integrator)


def test_poincare_constants():
    run(acceptance.check_poincare)


def test_field_hoelder_inequality():
    run(acceptance.check_field_hoelder)


def test_suite_is_complete():
    assert len(acceptance.CHECKS) == 12