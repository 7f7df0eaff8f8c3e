import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdfm.core import FlowFrame, GammaState, NetworkSpec, check_dense_ticks, derive_occupancies
from bdfm.exceptions import NegativeOccupancy


def test_network_spec_labels_and_external():
    spec = NetworkSpec(3)
    assert spec.size == 4
    assert spec.labels == ("node1", "node2", "node3")
    assert spec.label(0) == "External"
    assert spec.label(2) == "node2"


@pytest.mark.parametrize("count, labels", [(0, ()), (2, ("a",))])
def test_network_spec_rejects_bad_input(count, labels):
    with pytest.raises(ValueError):
        NetworkSpec(count, labels)


def test_flow_frame_validation():
    with pytest.raises(ValueError):
        FlowFrame(1, [[1, 0], [0, 0]])
    with pytest.raises(ValueError):
        FlowFrame(1, [[0, -1], [0, 0]])
    with pytest.raises(ValueError):
        FlowFrame(1, np.zeros((2, 3)))
    frame = FlowFrame(1, [[0, 2], [1, 0]])
    assert frame.x.dtype == np.int64
    assert not frame.x.flags.writeable


@pytest.mark.parametrize("r, c", [(0, 1), (1, 0), (-1, 1), (np.inf, 1), (1, np.nan)])
def test_gamma_state_invalid(r, c):
    with pytest.raises(ValueError):
        GammaState(r, c)


def test_gamma_state_moments():
    s = GammaState(4, 2)
    assert s.mean == 2.0 and s.var == 1.0


def test_derive_occupancies_single_node_example():
    frame = FlowFrame(1, [[0, 5], [2, 0]])
    (out,) = derive_occupancies([frame], [0, 10])
    assert out.n[1] == 13


def test_derive_occupancies_zero_counts_constant():
    frames = [FlowFrame(t, np.zeros((3, 3), dtype=int)) for t in range(1, 5)]
    out = derive_occupancies(frames, [0, 7, 4])
    assert all(np.array_equal(f.n[1:], [7, 4]) for f in out)


def test_derive_occupancies_matches_ledger_replay(rng):
    I, T = 3, 4
    n0 = np.array([0, 30, 30, 30])
    frames = []
    for t in range(1, T + 1):
        x = rng.integers(0, 5, size=(I + 1, I + 1))
        x[0, 0] = 0
        frames.append(FlowFrame(t, x))
    out = derive_occupancies(frames, n0)
    ledger = n0[1:].astype(int).copy()
    for f, got in zip(frames, out):
        for i in range(1, I + 1):
            ledger[i - 1] += sum(f.x[j, i] for j in range(I + 1)) - sum(f.x[i, j] for j in range(I + 1))
        assert np.array_equal(got.n[1:], ledger)


def test_derive_occupancies_negative_raises():
    frame = FlowFrame(2, [[0, 0], [5, 0]])
    with pytest.raises(NegativeOccupancy) as err:
        derive_occupancies([frame], [0, 3])
    assert err.value.node == 1 and err.value.t == 2


def test_derive_occupancies_idempotent(rng):
    frames = [FlowFrame(t, np.pad(rng.integers(0, 4, (3, 3)), 0) * np.array([[0, 1, 1], [1, 1, 1], [1, 1, 1]]))
              for t in range(1, 6)]
    once = derive_occupancies(frames, [0, 50, 50])
    twice = derive_occupancies(once, [0, 50, 50])
    assert once == twice


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 6), min_size=9, max_size=9), min_size=1, max_size=6))
def test_total_occupancy_changes_only_through_external(cells):
    frames = []
    for t, flat in enumerate(cells, start=1):
        x = np.array(flat).reshape(3, 3)
        x[0, 0] = 0
        frames.append(FlowFrame(t, x))
    out = derive_occupancies(frames, [0, 100, 100])
    prev = 200
    for f in out:
        total = f.n[1:].sum()
        assert total - prev == f.x[0, :].sum() - f.x[:, 0].sum()
        prev = total


def test_check_dense_ticks():
    frames = [FlowFrame(t, np.zeros((2, 2), int)) for t in (1, 2, 4)]
    with pytest.raises(ValueError):
        check_dense_ticks(frames)
    check_dense_ticks(frames[:2])
