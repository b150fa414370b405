import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrdie import numkit as nk
from vrdie.docdata import Entity
from vrdie.extractor import (TagSpace, batched_crf_nll, crf_log_partition, crf_nll, crf_score,
                             effective_transitions, extract_entities, viterbi)
from vrdie.numkit import Tensor


def brute(h, a):
    """Enumerate every tag path: (log partition, best path in lexicographic order, best score)."""
    steps, n = h.shape
    paths = list(itertools.product(range(n), repeat=steps))
    scores = [a[n, p[0]] + sum(a[p[t], p[t + 1]] for t in range(steps - 1)) + a[p[-1], n + 1]
              + sum(h[t, p[t]] for t in range(steps)) for p in paths]
    best = max(scores)
    first = next(p for p, s in zip(paths, scores) if s == best)  # product() is lexicographic
    mx = max(scores)
    return mx + math.log(sum(math.exp(s - mx) for s in scores)), list(first), best


def test_score_hand_example():
    h = np.array([[1.0, 2.0], [3.0, 4.0]])
    a = np.arange(16.0).reshape(4, 4)
    # start->1, 1->0, 0->end plus emissions h[0,1] + h[1,0]
    expected = a[2, 1] + a[1, 0] + a[0, 3] + 2.0 + 3.0
    assert float(crf_score(Tensor(h), [1, 0], Tensor(a)).data) == expected


def test_two_flat_paths_partition_is_ln2():
    z = crf_log_partition(Tensor(np.zeros((1, 2))), Tensor(np.zeros((4, 4))))
    assert math.isclose(float(z.data), math.log(2), rel_tol=1e-12)


crf_case = st.tuples(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31))


@settings(max_examples=60, deadline=None)
@given(crf_case)
def test_partition_and_viterbi_match_enumeration(case):
    steps, n, seed = case
    rng = np.random.default_rng(seed)
    h, a = rng.normal(size=(steps, n)), rng.normal(size=(n + 2, n + 2))
    log_z, best_path, best = brute(h, a)
    assert abs(float(crf_log_partition(Tensor(h), Tensor(a)).data) - log_z) < 1e-6
    path, score = viterbi(h, a)
    assert path == best_path
    assert math.isclose(score, best, rel_tol=1e-12, abs_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(crf_case)
def test_viterbi_ties_break_lexicographically(case):
    steps, n, seed = case
    rng = np.random.default_rng(seed)
    # small integer scores make exact ties common
    h, a = rng.integers(0, 2, size=(steps, n)).astype(float), rng.integers(0, 2, size=(n + 2, n + 2)).astype(float)
    assert viterbi(h, a)[0] == brute(h, a)[1]


@settings(max_examples=30, deadline=None)
@given(crf_case, st.floats(-5, 5))
def test_constant_emission_shift(case, c):
    steps, n, seed = case
    rng = np.random.default_rng(seed)
    h, a = rng.normal(size=(steps, n)), rng.normal(size=(n + 2, n + 2))
    y = rng.integers(0, n, steps)
    z0 = float(crf_log_partition(Tensor(h), Tensor(a)).data)
    z1 = float(crf_log_partition(Tensor(h + c), Tensor(a)).data)
    assert math.isclose(z1, z0 + c * steps, abs_tol=1e-9)
    assert math.isclose(float(crf_nll(Tensor(h + c), y, Tensor(a)).data),
                        float(crf_nll(Tensor(h), y, Tensor(a)).data), abs_tol=1e-9)


@settings(max_examples=30, deadline=None)
@given(crf_case)
def test_nll_nonnegative_and_saturates(case):
    steps, n, seed = case
    rng = np.random.default_rng(seed)
    h, a = rng.normal(size=(steps, n)), rng.normal(size=(n + 2, n + 2))
    y = rng.integers(0, n, steps)
    assert float(crf_nll(Tensor(h), y, Tensor(a)).data) >= -1e-12
    h[np.arange(steps), y] += 100.0
    # log Z and the path score are both ~100 * T, so only rounding error remains
    assert abs(float(crf_nll(Tensor(h), y, Tensor(a)).data)) < 1e-9


def test_batched_matches_single_sequence():
    rng = np.random.default_rng(7)
    n = 3
    h = rng.normal(size=(3, 4, n))
    a = rng.normal(size=(n + 2, n + 2))
    y = rng.integers(0, n, size=(3, 4))
    lengths = [4, 1, 3]
    mask = np.arange(4)[None, :] < np.array(lengths)[:, None]
    got = batched_crf_nll(Tensor(h), y, mask, Tensor(a)).data
    a_eff = effective_transitions(Tensor(a))
    for k, length in enumerate(lengths):
        want = float(crf_nll(Tensor(h[k, :length]), y[k, :length], a_eff).data)
        assert math.isclose(got[k], want, rel_tol=1e-10)


def test_batched_gradcheck():
    rng = np.random.default_rng(8)
    h = nk.parameter(rng.normal(size=(2, 3, 3)))
    a = nk.parameter(rng.normal(size=(5, 5)))
    y = np.array([[0, 2, 1], [1, 1, 0]])
    mask = np.array([[1, 1, 1], [1, 1, 0]], bool)
    report = nk.check_gradients(lambda: batched_crf_nll(h, y, mask, a).sum(), [h, a])
    assert max(report.values()) < 1e-4


def test_effective_transitions_block_start_and_end():
    a_eff = effective_transitions(Tensor(np.zeros((5, 5)))).data
    assert np.all(a_eff[:, 3] < -1000) and np.all(a_eff[4, :] < -1000)
    assert a_eff[3, 0] == 0 and a_eff[0, 4] == 0


def test_tag_space_and_extraction():
    ts = TagSpace(["DATE", "TOTAL"])
    assert ts.tags == ["O", "B-DATE", "I-DATE", "B-TOTAL", "I-TOTAL"]
    assert (ts.start, ts.end) == (5, 6)
    assert ts.encode(["B-TOTAL", "I-OTHER"]) == [3, 0]
    assert extract_entities("12.5", [3, 4, 4, 4], ts) == [Entity("TOTAL", "12.5")]
    assert extract_entities("ab", [1, 1], ts) == [Entity("DATE", "a"), Entity("DATE", "b")]
    with pytest.raises(nk.ContractError):
        extract_entities("ab", [1], ts)


def test_score_contracts():
    with pytest.raises(nk.ContractError):
        crf_score(Tensor(np.zeros((2, 2))), [0], Tensor(np.zeros((4, 4))))
    with pytest.raises(nk.ContractError):
        crf_score(Tensor(np.zeros((2, 2))), [0, 2], Tensor(np.zeros((4, 4))))
