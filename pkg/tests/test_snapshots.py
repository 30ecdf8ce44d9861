import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmdc_bounds import (CsvParseError, InputSequence, InvalidArgumentError, NumericalFailureError, SnapshotSet,
                         collect_bursts, collect_snapshots, generate_prbs, generate_sinusoid, read_matrix_csv,
                         write_matrix_csv)


def test_prbs_hold_pattern():
    u = generate_prbs(1, 4, amplitude=1, hold=2, seed=0).values[0]
    assert set(np.abs(u)) == {1.0}
    assert u[0] == u[1] and u[2] == u[3]


def test_prbs_channel_means_near_zero():
    u = generate_prbs(84, 20000, amplitude=1, hold=1, seed=7).values
    assert u.shape == (84, 20000)
    assert np.all(np.abs(u.mean(axis=1)) <= 0.05)


def test_prbs_two_blocks():
    u = generate_prbs(2, 10, amplitude=2, hold=5, seed=3).values
    for row in u:
        assert len(np.unique(row[:5])) == 1 and len(np.unique(row[5:])) == 1
        assert set(np.unique(row)) <= {-2.0, 2.0}


@settings(max_examples=40, deadline=None)
@given(q=st.integers(1, 5), N=st.integers(1, 60), hold=st.integers(1, 9), seed=st.integers(0, 2**32 - 1),
       amp=st.floats(0.1, 10))
def test_prbs_properties(q, N, hold, seed, amp):
    a = generate_prbs(q, N, amp, hold, seed).values
    b = generate_prbs(q, N, amp, hold, seed).values
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {-amp, amp}
    for start in range(0, N, hold):
        block = a[:, start:start + hold]
        assert np.all(block == block[:, :1])


@pytest.mark.parametrize("kwargs", [dict(q=0, N=3), dict(q=1, N=0), dict(q=1, N=3, hold=0),
                                    dict(q=1, N=3, amplitude=0.0), dict(q=1, N=3, amplitude=-1.0)])
def test_prbs_rejects_bad_arguments(kwargs):
    with pytest.raises(InvalidArgumentError):
        generate_prbs(**kwargs)


def test_sinusoid_probe_signal():
    u = generate_sinusoid(84, 1200, 2, 0.02, 1).values
    k = np.arange(1200)
    assert np.allclose(u, 2 * np.sin(0.04 * np.pi * k)[None, :], atol=0, rtol=0)
    assert np.allclose(u[:, 50:100], u[:, :50], atol=1e-12)
    assert 1200 / 50 > 2


def test_sinusoid_edge_cases():
    assert generate_sinusoid(1, 1, 5, 0.1, 1).values[0, 0] == 0.0
    u = generate_sinusoid(3, 100, 1, 0.25, 1).values
    assert np.allclose(u[:, :8], np.tile([0, 1, 0, -1, 0, 1, 0, -1], (3, 1)), atol=1e-12)
    for bad in (dict(amplitude=0, freq_hz=1), dict(amplitude=1, freq_hz=0), dict(amplitude=1, freq_hz=1, dt=0)):
        with pytest.raises(InvalidArgumentError):
            generate_sinusoid(1, 5, **bad)


def test_input_sequence_validation():
    with pytest.raises(InvalidArgumentError):
        InputSequence(np.array([[1.0, np.nan]]))
    with pytest.raises(InvalidArgumentError):
        InputSequence(np.zeros((0, 3)))
    seq = InputSequence(np.arange(6.0).reshape(2, 3))
    assert seq.q == 2 and seq.N == 3
    with pytest.raises(ValueError):
        seq.values[0, 0] = 1.0
    assert np.array_equal(seq.window(1, 2).values, [[1, 2], [4, 5]])


def test_collect_hand_iteration():
    d = collect_snapshots(lambda x, u: 0.5 * x + u, [1.0], InputSequence(np.ones((1, 5))), 3)
    assert np.allclose(d.X, [[1, 1.5]])
    assert np.allclose(d.Y, [[1.5, 1.75]])
    assert np.allclose(d.U, [[1, 1]])
    assert d.m == 3 and d.omega.shape == (2, 2)


def test_collect_fixed_point_and_minimal():
    v = np.array([1.0, -2.0, 3.0])
    d = collect_snapshots(lambda x, u: x, v, InputSequence(np.zeros((1, 3))), 4)
    assert np.all(d.X == v[:, None]) and np.all(d.Y == v[:, None])
    d2 = collect_snapshots(lambda x, u: x, v, InputSequence(np.zeros((1, 1))), 2)
    assert d2.X.shape == (3, 1) and d2.U.shape == (1, 1)


def test_collect_reports_failing_step():
    def oracle(x, u):
        with np.errstate(over="ignore"):
            return x * 1e200
    with pytest.raises(NumericalFailureError) as info:
        collect_snapshots(oracle, [1.0], InputSequence(np.zeros((1, 5))), 5)
    assert info.value.step == 2


def test_collect_needs_enough_inputs():
    with pytest.raises(InvalidArgumentError):
        collect_snapshots(lambda x, u: x, [1.0], InputSequence(np.zeros((1, 2))), 5)


@settings(max_examples=30, deadline=None)
@given(m=st.integers(2, 30), seed=st.integers(0, 1000))
def test_shift_property(m, seed):
    rng = np.random.default_rng(seed)
    A = 0.5 * rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 2))
    d = collect_snapshots(lambda x, u: A @ x + B @ u, rng.standard_normal(3),
                          generate_prbs(2, m, seed=seed), m)
    assert np.array_equal(d.Y[:, :-1], d.X[:, 1:])


def test_bursts_concatenate_and_keep_shift_within_bursts():
    x0s = np.array([[1.0, 10.0]])
    d = collect_bursts(lambda x, u: 2 * x + u, x0s, InputSequence(np.ones((1, 6))), 3)
    assert np.allclose(d.X, [[1, 3, 7, 10, 21, 43]])
    assert np.allclose(d.Y, [[3, 7, 15, 21, 43, 87]])


def test_snapshot_set_shape_checks():
    with pytest.raises(InvalidArgumentError):
        SnapshotSet(np.zeros((2, 3)), np.zeros((2, 4)), np.zeros((1, 3)))
    with pytest.raises(InvalidArgumentError):
        SnapshotSet(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 2)))


def test_csv_identity_round_trip(tmp_path):
    write_matrix_csv(tmp_path / "i.csv", np.eye(2))
    assert np.array_equal(read_matrix_csv(tmp_path / "i.csv"), np.eye(2))


def test_csv_random_round_trip(tmp_path):
    M = np.random.default_rng(0).standard_normal((5, 3)) * 1e3
    write_matrix_csv(tmp_path / "m.csv", M)
    back = read_matrix_csv(tmp_path / "m.csv")
    assert np.max(np.abs(back - M)) <= 1e-15 * np.max(np.abs(M))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=12))
def test_csv_round_trip_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "v.csv"
    write_matrix_csv(path, values)
    assert np.array_equal(read_matrix_csv(path).ravel(), np.array(values))


def test_csv_ragged_rows(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2,3\n4,5,6,7\n")
    with pytest.raises(CsvParseError) as info:
        read_matrix_csv(p)
    assert info.value.row == 2
    assert "row 2" in str(info.value)


def test_csv_non_numeric_cell(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3,x\n")
    with pytest.raises(CsvParseError) as info:
        read_matrix_csv(p)
    assert (info.value.row, info.value.column) == (2, 2)


def test_csv_refuses_non_finite(tmp_path):
    with pytest.raises(InvalidArgumentError):
        write_matrix_csv(tmp_path / "x.csv", [[1.0, np.inf]])
