from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manafpc.mana import build_network, effective_node_count, zipf_weights


def test_zipf_uniform_when_s_is_zero():
    assert zipf_weights(4, 0) == pytest.approx([0.25] * 4, abs=1e-15)


def test_zipf_three_nodes_s1():
    # C^{-1} = 1 + 1/2 + 1/3 = 11/6
    norm = sum(Fraction(1, i) for i in range(1, 4))
    expected = [float(Fraction(1, i) / norm) for i in range(1, 4)]
    assert expected == pytest.approx([6 / 11, 3 / 11, 2 / 11])
    assert zipf_weights(3, 1) == pytest.approx(expected, abs=1e-15)


def test_zipf_top100_shape():
    w = zipf_weights(100, 0.9)
    # straight line on log-log axes with slope -s
    slope = np.polyfit(np.log(np.arange(1, 101)), np.log(w), 1)[0]
    assert slope == pytest.approx(-0.9, abs=1e-12)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n, s", [(0, 1.0), (5, -0.1)])
def test_zipf_rejects_bad_input(n, s):
    with pytest.raises(ValueError):
        zipf_weights(n, s)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0])
def test_zipf_strictly_decreasing(s):
    assert np.all(np.diff(zipf_weights(50, s)) < 0)


def test_network_hundred_nodes_with_adversary():
    dist = build_network(100, 1, 0.2)
    assert dist.n_adversary == 20
    assert np.all(dist.weights[80:] == 0.01)
    assert dist.honest_weights.sum() == pytest.approx(0.8, abs=1e-12)
    assert np.all(np.diff(dist.honest_weights) < 0)


def test_network_no_adversary_uniform():
    dist = build_network(10, 0, 0)
    assert dist.n_adversary == 0
    assert dist.weights == pytest.approx([0.1] * 10, abs=1e-15)


def test_network_direct_construction():
    dist = build_network(10, 1, 0.3)
    assert dist.n_adversary == 3
    assert np.all(dist.weights[7:] == 0.1)
    assert dist.honest_weights == pytest.approx(0.7 * zipf_weights(7, 1), abs=1e-15)


def test_network_rejects_no_honest_nodes():
    with pytest.raises(ValueError):
        build_network(10, 1, 0.96)
    with pytest.raises(ValueError):
        build_network(10, 1, 1.0)


def test_zipf_over_all_switch():
    dist = build_network(10, 1, 0.3, zipf_over="all")
    profile = zipf_weights(10, 1)[:7]
    assert dist.honest_weights == pytest.approx(0.7 * profile / profile.sum(), abs=1e-15)
    with pytest.raises(ValueError):
        build_network(10, 1, 0.3, zipf_over="bogus")


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 400), s=st.floats(0, 3), q=st.floats(0, 0.9))
def test_normalization_and_invariants(n, s, q):
    if round(q * n) > n - 1:
        return
    dist = build_network(n, s, q)
    assert dist.weights.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(dist.weights > 0)
    assert np.all(np.diff(dist.honest_weights) <= 1e-18)
    assert dist.n_adversary == round(q * n)
    assert np.all(dist.weights[dist.n_honest:] == 1.0 / n)
    assert dist.weights[dist.n_honest:].sum() == pytest.approx(dist.n_adversary / n, abs=1e-12)


def test_effective_count_uniform():
    assert effective_node_count(build_network(1000, 0, 0), 1) == 1000


def test_effective_count_three_nodes():
    # only 6/11 >= 1/3
    assert effective_node_count(build_network(3, 1, 0), 1) == 1


def test_effective_count_small_s_below_n():
    assert effective_node_count(build_network(1000, 0.01, 0), 1) < 1000


def test_effective_count_monotone_in_s():
    counts = [effective_node_count(build_network(1000, s, 0), 1) for s in (0, 0.5, 1, 1.5, 2)]
    assert counts == sorted(counts, reverse=True)


def test_effective_count_rejects_gamma():
    with pytest.raises(ValueError):
        effective_node_count(build_network(10, 0, 0), 0)


def test_csv_export():
    text = build_network(10, 1, 0.2).to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "index,mana,is_adversary"
    assert len(lines) == 11
    assert lines[-1].endswith(",1") and lines[1].endswith(",0")
