import itertools

import numpy as np
import pytest

from wfbench.classifiers import PredictionDist
from wfbench.errors import DataError
from wfbench.hmm import align_emission, build_hmm, refine_session, viterbi
from wfbench.sitegraph import SiteGraph


def graph(labels, edges):
    return SiteGraph(frozenset(labels), frozenset(edges))


def brute_force_best(m, emissions):
    """Exhaustive enumeration over all state paths; the independent oracle."""
    n = m.n_states
    with np.errstate(divide="ignore"):
        log_e = [np.log(e) for e in emissions]
    paths = np.array(list(itertools.product(range(n), repeat=len(emissions))))
    scores = m.log_pi[paths[:, 0]] + log_e[0][paths[:, 0]]
    for t in range(1, len(emissions)):
        scores = scores + m.log_A[paths[:, t - 1], paths[:, t]] + log_e[t][paths[:, t]]
    return float(scores.max())


def test_two_cycle_transition_matrix():
    m = build_hmm(graph("ab", {("a", "b"), ("b", "a")}))
    assert m.states == ("a", "b")
    assert np.allclose(np.exp(m.log_A), [[0.0, 1.0], [1.0, 0.0]])


def test_fanout_row_is_uniform():
    m = build_hmm(graph("xabc", {("x", "a"), ("x", "b"), ("x", "c")}))
    row = np.exp(m.log_A)[m.state_index()["x"]]
    expected = np.zeros(4)
    for t in "abc":
        expected[m.state_index()[t]] = 1 / 3
    assert np.allclose(row, expected)


def test_sink_gets_self_loop():
    m = build_hmm(graph("ab", {("a", "b")}))
    A = np.exp(m.log_A)
    i = m.state_index()["b"]
    assert A[i, i] == 1.0
    assert np.allclose(A.sum(axis=1), 1.0)


def test_rows_and_pi_are_distributions():
    m = build_hmm(graph("abcd", {("a", "b"), ("b", "c"), ("c", "a"), ("c", "d")}))
    assert np.allclose(np.exp(m.log_A).sum(axis=1), 1.0)
    assert abs(np.exp(m.log_pi).sum() - 1.0) < 1e-12


def test_single_step_is_argmax_of_pi_times_emission():
    m = build_hmm(graph("abc", {("a", "b"), ("b", "c"), ("c", "a")}))
    e = np.array([0.2, 0.5, 0.3])
    path = viterbi(m, [e])
    assert path.labels == ("b",)
    assert abs(path.log_score - (np.log(1 / 3) + np.log(0.5))) < 1e-12


def test_uniform_emissions_tie_break_smallest_path():
    m = build_hmm(graph("ab", {("a", "b"), ("b", "a")}))
    e = np.array([0.5, 0.5])
    path = viterbi(m, [e, e, e])
    assert path.labels == ("a", "b", "a")


def test_viterbi_matches_enumeration_on_random_instances():
    rng = np.random.default_rng(42)
    for _ in range(60):
        n = int(rng.integers(2, 9))
        length = int(rng.integers(1, 7))
        labels = [f"s{i}" for i in range(n)]
        edges = set()
        for i in range(n):
            for j in range(n):
                if rng.random() < 0.4:
                    edges.add((labels[i], labels[j]))
        m = build_hmm(graph(labels, edges))
        emissions = []
        for _ in range(length):
            e = rng.uniform(0.01, 1.0, size=n)
            emissions.append(e / e.sum())
        decoded = viterbi(m, emissions)
        assert abs(decoded.log_score - brute_force_best(m, emissions)) <= 1e-9


def test_decoded_path_is_edge_valid():
    rng = np.random.default_rng(5)
    labels = [f"s{i}" for i in range(6)]
    edges = {(labels[i], labels[(i + 1) % 6]) for i in range(6)}
    edges.add((labels[0], labels[3]))
    g = graph(labels, edges)
    m = build_hmm(g)
    for _ in range(20):
        emissions = []
        for _ in range(8):
            e = rng.uniform(0.001, 1.0, size=6)
            emissions.append(e / e.sum())
        path = viterbi(m, emissions)
        for a, b in zip(path.labels, path.labels[1:]):
            assert (a, b) in g.edges


def test_emission_scaling_leaves_path_unchanged():
    rng = np.random.default_rng(9)
    labels = [f"s{i}" for i in range(5)]
    edges = {(a, b) for a in labels for b in labels if rng.random() < 0.5}
    m = build_hmm(graph(labels, edges))
    emissions = [rng.uniform(0.01, 1.0, size=5) for _ in range(6)]
    base = viterbi(m, emissions)
    scaled = viterbi(m, [7.3 * e for e in emissions])
    assert scaled.labels == base.labels


def test_viterbi_determinism():
    rng = np.random.default_rng(17)
    labels = [f"s{i}" for i in range(7)]
    edges = {(a, b) for a in labels for b in labels if rng.random() < 0.3}
    m = build_hmm(graph(labels, edges))
    emissions = [rng.uniform(0.0, 1.0, size=7) for _ in range(10)]
    assert viterbi(m, emissions) == viterbi(m, emissions)


def test_no_valid_path_error():
    m = build_hmm(graph("ab", {("a", "b"), ("b", "a")}))
    with pytest.raises(DataError, match="no valid path"):
        viterbi(m, [np.zeros(2)])


def test_empty_emissions_error():
    m = build_hmm(graph("ab", {("a", "b")}))
    with pytest.raises(DataError, match="at least one"):
        viterbi(m, [])


def test_align_emission_floors_unknown_states():
    m = build_hmm(graph("abc", {("a", "b"), ("b", "c"), ("c", "a")}))
    dist = PredictionDist(("b", "zz"), np.array([0.9, 0.1]))
    e = align_emission(m, dist, floor=1e-12)
    idx = m.state_index()
    assert e[idx["b"]] > 0.99
    assert e[idx["a"]] > 0.0 and e[idx["c"]] > 0.0
    assert abs(e.sum() - 1.0) < 1e-12


def test_refine_session_recovers_corrupted_middle_step():
    # chain a->b->c->a with one confidently wrong middle prediction
    m = build_hmm(graph("abc", {("a", "b"), ("b", "c"), ("c", "a")}))
    truth = ["a", "b", "c", "a", "b"]
    dists = []
    for i, t in enumerate(truth):
        probs = {l: 0.02 for l in "abc"}
        probs[t] = 0.96
        if i == 2:  # corrupted: classifier votes "a" where truth is "c"
            probs = {"a": 0.9, "b": 0.05, "c": 0.05}
        dists.append(PredictionDist(("a", "b", "c"), np.array([probs[l] for l in "abc"])))

    def fake_predict(samples):
        return dists

    per_sample = [d.argmax_label() for d in dists]
    assert per_sample != truth  # the classifier alone gets step 2 wrong
    path = refine_session(fake_predict, m, list(range(5)))
    assert list(path.labels) == truth
    # oracle: decoded score equals exhaustive maximum
    emissions = [align_emission(m, d, floor=1e-12) for d in dists]
    assert abs(path.log_score - brute_force_best(m, emissions)) <= 1e-9


def test_confident_consistent_classifier_matches_argmax():
    m = build_hmm(graph("abc", {("a", "b"), ("b", "c"), ("c", "a")}))
    truth = ["b", "c", "a"]
    dists = [
        PredictionDist(("a", "b", "c"), np.array([0.01, 0.98, 0.01])),
        PredictionDist(("a", "b", "c"), np.array([0.01, 0.01, 0.98])),
        PredictionDist(("a", "b", "c"), np.array([0.98, 0.01, 0.01])),
    ]
    path = refine_session(lambda s: dists, m, [0, 1, 2])
    assert list(path.labels) == truth == [d.argmax_label() for d in dists]
