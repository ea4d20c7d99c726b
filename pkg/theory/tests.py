import json

import numpy as np
from django.test import SimpleTestCase

from numeric.exceptions import DegenerateInputError, DimensionError

from .attention import (CROSS_TERMS, TERM_NAMES, decompose_atv_attention, full_steered_attention,
                        leave_one_out_residuals, linear_attn, prefix_linear, term_roles)
from .conversions import (AtvFactors, LoraFactors, atv_increment, atv_to_lora, lora_increment,
                          lora_to_atv)
from .linalg import (complete_basis, numerical_rank, project_to_rank, rel_err, row_pseudoinverse,
                     row_svd, tail_ratio)
from .verify import verify_theorem1, verify_theorem2


class LinalgTestCase(SimpleTestCase):

    def test_row_pseudoinverse(self):
        np.testing.assert_allclose(row_pseudoinverse([3.0, 4.0]), [0.12, 0.16])
        x = np.random.default_rng(0).normal(size=7)
        self.assertAlmostEqual(float(x @ row_pseudoinverse(x)), 1.0, places=14)

    def test_zero_row_is_degenerate(self):
        with self.assertRaises(DegenerateInputError):
            row_pseudoinverse(np.zeros(4))
        with self.assertRaises(DegenerateInputError):
            row_pseudoinverse(np.full(4, 1e-12))

    def test_row_svd(self):
        svd = row_svd([3.0, 4.0])
        self.assertEqual(svd.norm, 5.0)
        np.testing.assert_allclose(svd.v_r[:, 0], [0.6, 0.8])
        np.testing.assert_allclose(svd.reconstruct(), [3.0, 4.0])
        np.testing.assert_allclose(svd.v_r.T @ svd.v_r, np.eye(2), atol=1e-12)

    def test_complete_basis_is_orthonormal(self):
        direction = np.random.default_rng(1).normal(size=6)
        basis = complete_basis(direction / np.linalg.norm(direction))
        np.testing.assert_allclose(basis.T @ basis, np.eye(6), atol=1e-12)

    def test_rank_tools(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 5))
        self.assertEqual(numerical_rank(m), 2)
        self.assertLess(tail_ratio(m, 2), 1e-12)
        full = rng.normal(size=(6, 5))
        self.assertEqual(numerical_rank(project_to_rank(full, 3)), 3)
        self.assertEqual(numerical_rank(np.zeros((3, 3))), 0)

    def test_rel_err(self):
        self.assertEqual(rel_err([1.0, 1.0], [1.0, 1.0]), 0.0)
        self.assertEqual(rel_err([0.5], [0.0]), 0.5)
        with self.assertRaises(DimensionError):
            rel_err([1.0], [1.0, 2.0])


class ConversionTestCase(SimpleTestCase):

    def test_atv_to_lora_reproduces_the_increment(self):
        rng = np.random.default_rng(3)
        x, v, a = rng.normal(size=16), rng.normal(size=4), rng.normal(size=(4, 16))
        lora = atv_to_lora(x, v, a, lam=0.001)
        self.assertEqual(lora.rank, 4)
        self.assertEqual(lora.w_down.shape, (16, 4))
        self.assertLess(rel_err(lora_increment(x, lora), atv_increment(AtvFactors(0.001, v, a))), 1e-12)

    def test_lora_to_atv_worked_example(self):
        factors = LoraFactors(w_down=[[3.0, 4.0], [0.0, 0.0]], w_up=np.eye(2), s=1.0)
        atv = lora_to_atv([1.0, 0.0], factors)
        self.assertEqual(atv.lam, 5.0)
        np.testing.assert_allclose(atv.v, [0.6, 0.8])
        np.testing.assert_allclose(atv_increment(atv), [3.0, 4.0])

    def test_zero_row_gives_zero_lambda(self):
        factors = LoraFactors(w_down=np.zeros((3, 2)), w_up=np.ones((2, 3)))
        atv = lora_to_atv(np.ones(3), factors)
        self.assertEqual(atv.lam, 0.0)
        np.testing.assert_array_equal(atv.v, [1.0, 0.0])
        np.testing.assert_array_equal(atv_increment(atv), np.zeros(3))

    def test_shape_checks(self):
        with self.assertRaises(DimensionError):
            LoraFactors(w_down=np.ones((3, 2)), w_up=np.ones((3, 3)))
        with self.assertRaises(DimensionError):
            atv_to_lora(np.ones(3), np.ones(2), np.ones((3, 3)), lam=1.0)
        with self.assertRaises(DimensionError):
            lora_to_atv(np.ones(4), LoraFactors(np.ones((3, 2)), np.ones((2, 3))))


class AttentionTestCase(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(4)
        self.x, self.c = rng.normal(size=(5, 6)), rng.normal(size=(4, 6))
        self.w = [rng.normal(size=(6, 6)) for _ in range(3)]
        self.v = rng.normal(size=6)

    def test_eight_terms_sum_to_the_steered_product(self):
        dec = decompose_atv_attention(self.x, self.c, self.v, *self.w)
        full = full_steered_attention(self.x, self.c, self.v, *self.w)
        self.assertEqual(sorted(dec.terms), list(TERM_NAMES))
        self.assertLess(rel_err(dec.total(), full), 1e-12)

    def test_first_two_terms_are_prefix_attention(self):
        dec = decompose_atv_attention(self.x, self.c, self.v, *self.w)
        expected = prefix_linear(self.x, self.c, dec.p_k, dec.p_v, *self.w)
        self.assertLess(rel_err(dec.prefix_part(), expected), 1e-12)

    def test_zero_vector_leaves_only_the_base_term(self):
        dec = decompose_atv_attention(self.x, self.c, np.zeros(6), *self.w)
        for name in TERM_NAMES[1:]:
            np.testing.assert_array_equal(dec[name], np.zeros((5, 6)))
        np.testing.assert_allclose(dec['T1'], linear_attn(self.x @ self.w[0], self.c @ self.w[1],
                                                          self.c @ self.w[2]))

    def test_cross_terms_do_not_vanish(self):
        dec = decompose_atv_attention(self.x, self.c, self.v, *self.w)
        self.assertGreater(np.linalg.norm(dec.delta_cross), 1e-6 * np.linalg.norm(dec['T1']))
        full = full_steered_attention(self.x, self.c, self.v, *self.w)
        self.assertTrue(all(r > 0 for r in leave_one_out_residuals(dec, full).values()))

    def test_term_roles(self):
        roles = {r['term']: r['prefix_representable'] for r in term_roles()}
        self.assertEqual([t for t, ok in roles.items() if not ok], list(CROSS_TERMS))

    def test_width_mismatch(self):
        with self.assertRaises(DimensionError):
            decompose_atv_attention(self.x, self.c, np.zeros(5), *self.w)


class VerificationTestCase(SimpleTestCase):

    def test_theorem1_suite_passes(self):
        report = verify_theorem1(trials=10, seed=42)
        self.assertTrue(report.passed, [r.to_dict() for r in report.failures])
        self.assertLessEqual(report.max_rel_err({'atv_to_lora', 'lora_to_atv', 'round_trip'}), 1e-8)
        checks = {r.check for r in report.records}
        self.assertLessEqual({'degenerate_rejected', 'rank_projection', 'truncated_projection'}, checks)
        self.assertLessEqual(report.max_rel_err({'rank_projection', 'truncated_projection'}), 1e-8)

    def test_theorem2_suite_passes_with_a_null_trial(self):
        report = verify_theorem2(trials=5, seed=42)
        self.assertTrue(report.passed, [r.to_dict() for r in report.failures])
        null = [r for r in report.records if r.check == 'null_vector']
        self.assertEqual([r.trial for r in null], [4])

    def test_reports_are_reproducible(self):
        a = verify_theorem1(trials=3, seed=7).to_json()
        self.assertEqual(a, verify_theorem1(trials=3, seed=7).to_json())
        self.assertIn('"pass": true', a)
        self.assertEqual(json.loads(verify_theorem2(trials=2, seed=7).to_json())['name'], 'theorem2')

    def test_dimension_preconditions(self):
        with self.assertRaises(DimensionError):
            verify_theorem1(trials=1, dims={'d_l': 4, 'd_s': 8})
        with self.assertRaises(DimensionError):
            verify_theorem1(trials=1, dims={'d_s': 0})
        with self.assertRaises(ValueError):
            verify_theorem2(trials=1, dims={'m': 0})
        with self.assertRaises(DimensionError):
            verify_theorem2(trials=1, dims={'T': 2.5})
        self.assertTrue(verify_theorem1(trials=1, dims={'d_l': 8, 'd_s': 8}).passed)

    def test_tolerance_can_fail_a_suite(self):
        report = verify_theorem1(trials=2, seed=1, tol=0.0)
        self.assertFalse(report.passed)
