from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from conftest import batch_se, one_vertex_model, retry_with_fresh_seed, three_state_model
from openchain import Constant, IidProduct, OpenChainModel, errors
from openchain.simulate import (
    enumerate_one_vertex_stationary,
    multinomial_split,
    run,
    step,
)


class TestMultinomialSplit:
    def test_zero_particles(self):
        assert np.array_equal(multinomial_split(0, [0.3, 0.2, 0.5], 1), [0, 0, 0])

    def test_degenerate_category(self):
        assert np.array_equal(multinomial_split(7, [1.0, 0.0, 0.0], 1), [7, 0, 0])
        assert np.array_equal(multinomial_split(7, [0.0, 0.0, 1.0], 2), [0, 0, 7])

    def test_components_sum_to_n(self):
        rng = np.random.PCG64(3)
        for n in (1, 5, 100, 12345):
            draw = multinomial_split(n, [0.3, 0.2, 0.5], rng)
            assert draw.sum() == n
            assert np.all(draw >= 0)

    def test_large_n_proportions(self):
        n = 10**6
        probs = np.array([0.3, 0.2, 0.5])
        draw = multinomial_split(n, probs, 99)
        bounds = 4 * np.sqrt(probs * (1 - probs) / n)
        assert np.all(np.abs(draw / n - probs) <= bounds)

    def test_chi_square_against_exact_pmf(self):
        # oracle: full multinomial pmf enumeration for n=5, three categories
        n, probs, draws = 5, (0.2, 0.3, 0.5), 10**5
        rng = np.random.PCG64(17)
        counts = {}
        for _ in range(draws):
            key = tuple(multinomial_split(n, probs, rng))
            counts[key] = counts.get(key, 0) + 1
        stat = 0.0
        cells = 0
        for a in range(n + 1):
            for b in range(n + 1 - a):
                c = n - a - b
                pmf = (
                    comb(n, a)
                    * comb(n - a, b)
                    * probs[0] ** a
                    * probs[1] ** b
                    * probs[2] ** c
                )
                expected = pmf * draws
                stat += (counts.get((a, b, c), 0) - expected) ** 2 / expected
                cells += 1
        assert sps.chi2.sf(stat, cells - 1) > 0.01

    def test_bad_probabilities_rejected(self):
        with pytest.raises(ValueError):
            multinomial_split(3, [0.5, 0.4], 1)
        with pytest.raises(ValueError):
            multinomial_split(3, [-0.1, 1.1], 1)

    @given(st.integers(min_value=0, max_value=200), st.integers(min_value=0, max_value=2**32))
    @settings(max_examples=50, deadline=None)
    def test_conservation_property(self, n, seed):
        rng = np.random.default_rng(seed)
        w = rng.random(4) + 1e-3
        probs = w / w.sum()
        draw = multinomial_split(n, probs, seed)
        assert draw.sum() == n


class TestStep:
    def test_everything_escapes_when_q_zero(self):
        model = OpenChainModel.from_matrix([[0.0]], Constant([1]))
        out = step(model, [5], None, 11)
        assert np.array_equal(out.next, [1])
        assert np.array_equal(out.outflow_per_state, [5])
        assert out.outflow_total == 5

    def test_empty_chain(self):
        model = three_state_model(0.4, 0.25)
        model = OpenChainModel(model.jump, model.escape, Constant([2, 0, 1]))
        out = step(model, [0, 0, 0], None, 1)
        assert np.array_equal(out.next, [2, 0, 1])
        assert not out.outflow_per_state.any()
        assert not out.retained.any()

    def test_per_step_conservation(self):
        model = three_state_model(0.4, 0.45)
        rng = np.random.PCG64(5)
        current = np.array([3, 9, 1])
        for _ in range(1000):
            out = step(model, current, None, rng)
            assert np.array_equal(out.retained.sum(axis=1) + out.outflow_per_state, current)
            assert np.array_equal(out.next, out.inflow + out.retained.sum(axis=0))
            assert out.outflow_total == out.outflow_per_state.sum()
            current = out.next

    def test_one_vertex_time_average(self):
        # stationary mean p/(1-q) = 0.6 within 3 batch-means SEs
        def check(seed):
            model = one_vertex_model(0.3, 0.5)
            record = run(model, 500_000, seed=seed)
            x = record.post_burn_in_counts().astype(float)
            est, se = batch_se(x)
            assert abs(est[0] - 0.6) <= 3 * se[0]

        retry_with_fresh_seed(check, [41, 42])


class TestRun:
    def test_determinism_same_seed(self):
        model = three_state_model(0.3, 0.3)
        a = run(model, 100, seed=123)
        b = run(model, 100, seed=123)
        assert np.array_equal(a.counts, b.counts)
        assert np.array_equal(a.inflow, b.inflow)
        assert np.array_equal(a.outflow, b.outflow)
        assert a.model_fingerprint == b.model_fingerprint

    def test_zero_inflow_stays_empty(self):
        model = OpenChainModel(
            three_state_model(0.4, 0.25).jump,
            three_state_model(0.4, 0.25).escape,
            Constant([0, 0, 0]),
        )
        record = run(model, 200, seed=9)
        assert not record.counts.any()
        assert not record.outflow.any()

    def test_three_state_mean_from_paper(self):
        # equidistribution at 1/(2-4q): q=0.45 gives mean 5 per state
        def check(seed):
            record = run(three_state_model(0.4, 0.45), 500_000, seed=seed)
            x = record.post_burn_in_counts().astype(float)
            est, se = batch_se(x)
            assert np.all(np.abs(est - 5.0) <= 3 * se)

        retry_with_fresh_seed(check, [71, 72])

    def test_outflow_balances_inflow_at_stationarity(self):
        def check(seed):
            record = run(three_state_model(0.2, 0.45), 300_000, seed=seed)
            o = record.outflow_total[record.burn_in :].astype(float)
            i = record.inflow[record.burn_in :].sum(axis=1).astype(float)
            est, se = batch_se(o - i)
            assert abs(est) <= 3 * max(se, 1e-12)

        retry_with_fresh_seed(check, [55, 56])

    def test_burn_in_default_and_bounds(self):
        model = one_vertex_model()
        record = run(model, 1000, seed=1)
        assert record.burn_in == 100
        with pytest.raises(ValueError):
            run(model, 10, seed=1, burn_in=20)

    def test_run_matches_step_loop(self):
        # replaying the same bit stream through the scalar step path must
        # reproduce the kernel run exactly
        model = three_state_model(0.4, 0.45)
        record = run(model, 500, seed=2024)
        rng = np.random.PCG64(2024)
        current = np.zeros(3, dtype=np.int64)
        for t in range(500):
            out = step(model, current, None, rng)
            assert np.array_equal(out.next, record.counts[t])
            assert np.array_equal(out.inflow, record.inflow[t])
            assert np.array_equal(out.outflow_per_state, record.outflow[t])
            current = out.next

    def test_empirical_histogram_matches_enumeration_oracle(self):
        # chi-square of the thinned stationary histogram against the exact
        # kernel solution (thinning de-correlates the samples the test needs)
        def check(seed):
            p, q = 0.2, 0.5
            model = one_vertex_model(p, q)
            record = run(model, 1_100_000, seed=seed, burn_in=100_000)
            pi = enumerate_one_vertex_stationary(p, q, 64)
            x = record.post_burn_in_counts()[::32, 0]
            kmax = max(x.max(), 8)
            obs = np.bincount(x, minlength=kmax + 1).astype(float)
            expected = pi[: kmax + 1] * x.size
            mask = expected >= 5
            o = np.concatenate([obs[mask], [obs[~mask].sum()]])
            e = np.concatenate([expected[mask], [expected[~mask].sum()]])
            stat = ((o - e) ** 2 / e).sum()
            assert sps.chi2.sf(stat, len(o) - 1) > 0.01

        retry_with_fresh_seed(check, [2718, 2719])


class TestEnumerationOracle:
    def test_no_inflow_is_point_mass(self):
        pi = enumerate_one_vertex_stationary(0.0, 0.5, 16)
        assert pi[0] == pytest.approx(1.0, abs=1e-14)
        assert np.all(pi[1:] < 1e-14)

    def test_mean_matches_closed_form(self):
        pi = enumerate_one_vertex_stationary(0.3, 0.5, 64)
        ks = np.arange(65)
        assert abs(pi @ ks - 0.6) < 1e-10

    def test_variance_resolves_the_sign_erratum(self):
        # sum of pq^r(1 - pq^r) gives p/(1-q) - p^2/(1-q^2) = 0.48; the
        # printed plus-sign value 0.72 must NOT match
        pi = enumerate_one_vertex_stationary(0.3, 0.5, 64)
        ks = np.arange(65)
        mean = pi @ ks
        var = pi @ (ks - mean) ** 2
        assert abs(var - 0.48) < 1e-10
        assert abs(var - 0.72) > 0.2

    def test_truncation_too_small(self):
        with pytest.raises(errors.TruncationTooSmall):
            enumerate_one_vertex_stationary(1.0, 0.97, 24)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            enumerate_one_vertex_stationary(1.5, 0.5, 16)
        with pytest.raises(ValueError):
            enumerate_one_vertex_stationary(0.5, 1.0, 16)


class TestRecordSerialization:
    def test_csv_round_trip_columns(self, tmp_path):
        model = three_state_model(0.4, 0.25)
        record = run(model, 50, seed=6, burn_in=5)
        path = tmp_path / "record.csv"
        record.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# seed=6")
        assert lines[1] == "t,N_1,N_2,N_3,J_1,J_2,J_3,U_1,U_2,U_3,O,burn_in_flag"
        assert len(lines) == 2 + 50
        first = [int(v) for v in lines[2].split(",")]
        assert first[0] == 1 and first[-1] == 1  # t=1 is inside burn-in
        data = np.loadtxt(path, delimiter=",", skiprows=2, dtype=np.int64)
        assert np.array_equal(data[:, 1:4], record.counts)
        assert np.array_equal(data[:, 10], record.outflow_total)

    def test_manifest_fields(self, tmp_path):
        import json

        model = one_vertex_model()
        record = run(model, 20, seed=3)
        path = tmp_path / "manifest.json"
        record.write_manifest(path, extra={"config_sha256": "abc"})
        doc = json.loads(path.read_text())
        assert doc["seed"] == 3
        assert doc["generator"] == "pcg64"
        assert doc["horizon"] == 20
        assert doc["burn_in"] == 2
        assert doc["model_fingerprint"] == model.fingerprint()
        assert doc["config_sha256"] == "abc"
