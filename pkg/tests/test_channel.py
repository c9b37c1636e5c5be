"""Markov channel model: transition table, stationarity, calibration, traces."""

import numpy as np
import pytest

from cotag_sim import channel as ch


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


S = ch.ChannelState


class TestTransitionTable:
    def test_degenerate_no_flip_locked(self):
        params = ch.MarkovParams(p=0.0, q=1.0)
        assert ch.transition_prob(S.HH, S.HH, params) == 1.0
        assert ch.transition_prob(S.HH, S.HL, params) == 0.0

    def test_full_symmetry(self):
        params = ch.MarkovParams(p=0.5, q=0.5)
        for a in S:
            for b in S:
                assert ch.transition_prob(a, b, params) == pytest.approx(0.25)

    def test_paper_table_values(self):
        params = ch.MarkovParams(p=0.2, q=0.7)
        # no flip, mismatch
        assert ch.transition_prob(S.HH, S.HL, params) == pytest.approx(0.8 * 0.3)
        assert ch.transition_prob(S.HL, S.HL, params) == pytest.approx(0.8 * 0.3)
        assert ch.transition_prob(S.LH, S.LH, params) == pytest.approx(0.8 * 0.3)
        assert ch.transition_prob(S.LL, S.LH, params) == pytest.approx(0.8 * 0.3)
        # flip, mismatch
        assert ch.transition_prob(S.LH, S.HL, params) == pytest.approx(0.2 * 0.3)
        assert ch.transition_prob(S.HH, S.LH, params) == pytest.approx(0.2 * 0.3)
        # no flip, match
        assert ch.transition_prob(S.HH, S.HH, params) == pytest.approx(0.8 * 0.7)
        assert ch.transition_prob(S.LL, S.LL, params) == pytest.approx(0.8 * 0.7)
        # flip, match
        assert ch.transition_prob(S.LH, S.HH, params) == pytest.approx(0.2 * 0.7)
        assert ch.transition_prob(S.HL, S.LL, params) == pytest.approx(0.2 * 0.7)

    def test_rows_sum_to_one(self):
        r = rng(1)
        for _ in range(50):
            params = ch.MarkovParams(p=float(r.random()), q=float(r.random()))
            m = ch.transition_matrix(params)
            assert np.allclose(m.sum(axis=1), 1.0)

    def test_depends_only_on_link1_of_origin(self):
        params = ch.MarkovParams(p=0.3, q=0.6)
        for to in S:
            assert ch.transition_prob(S.HH, to, params) == \
                ch.transition_prob(S.HL, to, params)
            assert ch.transition_prob(S.LH, to, params) == \
                ch.transition_prob(S.LL, to, params)


class TestStepping:
    def test_locked_chain_never_moves(self):
        params = ch.MarkovParams(p=0.0, q=1.0)
        st = S.HH
        r = rng(2)
        for _ in range(100):
            st = ch.step_state(st, params, r)
            assert st is S.HH

    def test_bulk_matches_single_steps(self):
        params = ch.MarkovParams(p=0.37, q=0.81)
        states_bulk = ch.simulate_states(S.HL, params, 500, rng(3))
        r = rng(3)
        st = S.HL
        for i in range(500):
            st = ch.step_state(st, params, r)
            assert int(st) == states_bulk[i]

    def test_empirical_transitions_match_table(self):
        params = ch.MarkovParams(p=0.3, q=0.6)
        states = ch.simulate_states(S.HH, params, 200_000, rng(4))
        m = np.zeros((4, 4))
        np.add.at(m, (states[:-1], states[1:]), 1)
        m /= m.sum(axis=1, keepdims=True)
        assert np.abs(m - ch.transition_matrix(params)).max() < 0.01

    def test_stationary_occupancy(self):
        params = ch.MarkovParams(p=0.4, q=0.7)
        states = ch.simulate_states(S.LL, params, 200_000, rng(5))
        occ = np.bincount(states, minlength=4) / states.size
        assert np.abs(occ - ch.stationary_distribution(params)).max() < 0.01

    def test_stationary_is_left_eigenvector(self):
        for p, q in [(0.2, 0.2), (0.5, 0.9), (0.8, 0.4)]:
            params = ch.MarkovParams(p=p, q=q)
            pi = ch.stationary_distribution(params)
            assert np.allclose(pi @ ch.transition_matrix(params), pi)


class TestCorrelation:
    def test_closed_form_endpoints(self):
        assert ch.state_correlation(ch.MarkovParams(0.5, 0.5)) == 0.0
        assert ch.state_correlation(ch.MarkovParams(0.5, 1.0)) == 1.0
        assert ch.state_correlation(ch.MarkovParams(0.5, 0.0)) == -1.0

    def test_q_for_correlation_inverts(self):
        for corr in (-0.34, 0.0, 0.34, 0.9):
            q = ch.q_for_correlation(corr)
            assert ch.state_correlation(ch.MarkovParams(0.5, q)) == \
                pytest.approx(corr)

    def test_monte_carlo_indicator_correlation(self):
        for q in (0.2, 0.67):
            params = ch.MarkovParams(p=0.5, q=q)
            states = ch.simulate_states(S.HH, params, 300_000, rng(6))
            i1 = (states & 2) != 0
            i2 = (states & 1) != 0
            measured = np.corrcoef(i1, i2)[0, 1]
            assert measured == pytest.approx(2 * q - 1, abs=0.02)


class TestBandwidth:
    def test_zero_variance_degenerate(self):
        levels = ch.RateLevels(mean_low=3.0, mean_high=10.0, std_low=0.0,
                               std_high=0.0)
        r = rng(7)
        assert ch.sample_bandwidth(S.HH, levels, r) == (10.0, 10.0)
        assert ch.sample_bandwidth(S.HL, levels, r) == (10.0, 3.0)
        assert ch.sample_bandwidth(S.LH, levels, r) == (3.0, 10.0)
        assert ch.sample_bandwidth(S.LL, levels, r) == (3.0, 3.0)

    def test_sample_mean_low_state(self):
        levels = ch.RateLevels()
        r = rng(8)
        draws = np.array([ch.sample_bandwidth(S.LL, levels, r)
                          for _ in range(20_000)])
        assert draws.mean(axis=0) == pytest.approx([3.0, 3.0], rel=0.01)

    def test_bulk_matches_single_draws(self):
        levels = ch.RateLevels()
        states = ch.simulate_states(S.HH, ch.MarkovParams(0.5, 0.5), 100, rng(9))
        bulk = ch.sample_bandwidth_path(states, levels, rng(10))
        r = rng(10)
        for i, s in enumerate(states):
            r1, r2 = ch.sample_bandwidth(S(int(s)), levels, r)
            assert bulk[i, 0] == pytest.approx(r1)
            assert bulk[i, 1] == pytest.approx(r2)

    def test_truncated_at_zero(self):
        levels = ch.RateLevels(mean_low=0.01, mean_high=1.0, std_low=5.0,
                               std_high=5.0)
        draws = ch.sample_bandwidth_path(
            np.zeros(1000, dtype=np.int8), levels, rng(11))
        assert (draws >= 0).all()
        assert (draws == 0).any()  # clamping visible with these spreads

    def test_from_variances(self):
        lv = ch.RateLevels.from_variances(3.0, 10.0, 0.09, 1.0)
        assert lv.std_low == pytest.approx(0.3)
        assert lv.std_high == pytest.approx(1.0)

    def test_invalid_levels_rejected(self):
        with pytest.raises(ValueError):
            ch.RateLevels(mean_low=5.0, mean_high=3.0)
        with pytest.raises(ValueError):
            ch.RateLevels(mean_low=-1.0, mean_high=3.0)


class TestCalibration:
    def test_round_trip_identification(self):
        params = ch.MarkovParams(p=0.35, q=0.75, step_s=0.1)
        levels = ch.RateLevels()
        trace = ch.generate_trace(params, levels, 100_000, rng(12))
        est_params, est_levels = ch.calibrate_from_trace(trace)
        assert est_params.p == pytest.approx(0.35, abs=0.03)
        assert est_params.q == pytest.approx(0.75, abs=0.03)
        assert est_levels.mean_low == pytest.approx(3.0, rel=0.02)
        assert est_levels.mean_high == pytest.approx(10.0, rel=0.02)
        assert est_params.step_s == pytest.approx(0.1)

    def test_error_shrinks_with_length(self):
        params = ch.MarkovParams(p=0.3, q=0.6)
        levels = ch.RateLevels()
        errs = []
        for n in (2_000, 200_000):
            trace = ch.generate_trace(params, levels, n, rng(13))
            est, _ = ch.calibrate_from_trace(trace)
            errs.append(abs(est.p - 0.3) + abs(est.q - 0.6))
        assert errs[1] < errs[0]

    def test_constant_trace_gives_zero_p(self):
        trace = [ch.TraceRecord(i * 0.1, 5.0, 5.0) for i in range(100)]
        params, _ = ch.calibrate_from_trace(trace)
        assert params.p == 0.0

    def test_lockstep_alternation_gives_p1_q1(self):
        trace = [ch.TraceRecord(i * 0.1, 10.0 if i % 2 else 1.0,
                                10.0 if i % 2 else 1.0) for i in range(100)]
        params, _ = ch.calibrate_from_trace(trace)
        assert params.p == 1.0
        assert params.q == 1.0

    def test_too_short_trace_rejected(self):
        with pytest.raises(ch.CalibrationError):
            ch.calibrate_from_trace([ch.TraceRecord(0.0, 1.0, 1.0)])


class TestTraceIo:
    def test_round_trip(self, tmp_path):
        params = ch.MarkovParams(p=0.5, q=0.5)
        trace = ch.generate_trace(params, ch.RateLevels(), 50, rng(14))
        path = tmp_path / "t.csv"
        ch.save_trace(trace, path)
        assert ch.load_trace(path) == trace

    def test_well_formed_file(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t_s,rate1_gbps,rate2_gbps\n0.0,1.0,2.0\n0.1,3,4\n0.2,5,6\n")
        recs = ch.load_trace(path)
        assert len(recs) == 3
        assert recs[1] == ch.TraceRecord(0.1, 3.0, 4.0)

    def test_negative_rate_names_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t_s,rate1_gbps,rate2_gbps\n0.0,1.0,2.0\n0.1,-3,4\n")
        with pytest.raises(ch.TraceFormatError, match="line 3"):
            ch.load_trace(path)

    def test_non_monotone_timestamps_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t_s,rate1_gbps,rate2_gbps\n0.2,1,1\n0.1,1,1\n")
        with pytest.raises(ch.TraceFormatError, match="line 3"):
            ch.load_trace(path)

    def test_malformed_field_names_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t_s,rate1_gbps,rate2_gbps\n0.0,abc,2.0\n")
        with pytest.raises(ch.TraceFormatError, match="line 2"):
            ch.load_trace(path)

    def test_single_link_requires_flag(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t_s,rate1_gbps\n0.0,1.0\n0.1,2.0\n")
        with pytest.raises(ch.TraceFormatError):
            ch.load_trace(path)
        recs = ch.load_trace(path, duplicate_single=True)
        assert recs[0].rate1_gbps == recs[0].rate2_gbps == 1.0

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time,r1,r2\n0.0,1.0,2.0\n")
        with pytest.raises(ch.TraceFormatError, match="line 1"):
            ch.load_trace(path)


class TestParamsValidation:
    def test_probability_bounds(self):
        with pytest.raises(ValueError):
            ch.MarkovParams(p=1.2, q=0.5)
        with pytest.raises(ValueError):
            ch.MarkovParams(p=0.5, q=-0.1)
        with pytest.raises(ValueError):
            ch.MarkovParams(p=0.5, q=0.5, step_s=0.0)
