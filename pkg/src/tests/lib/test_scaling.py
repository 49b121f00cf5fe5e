import numpy as np
import pytest

import lib.glob as glob
glob.TEST_INSTANCE = True

from lib.autodiff import ContractViolation
from lib.flows import FlowNet
from lib.gp import SEKernel, kernel_eval
from lib.models import build_model
from lib.scaling import count_model_parameters, count_parameters, scaling_study, time_transition


def test_reported_counts():
    assert count_parameters("etgpssm", 100, 100) == (100 * 100 + 3 + 100 + 100 ** 2) + (258 * 100 + 8384)
    assert count_parameters("etgpssm", 100, 100) == 54287
    assert count_parameters("gpssm-independent", 1, 100) == 100 + 3 + 100 + 100 ** 2


@pytest.mark.parametrize("family", ["etgpssm", "gpssm-independent"])
def test_counts_on_the_whole_grid(family):
    M = 100
    for d_x in range(1, 101):
        gp = M * d_x + 3 + M + M * M
        expected = gp + 258 * d_x + 8384 if family == "etgpssm" else gp * d_x
        assert count_parameters(family, d_x, M) == expected


def test_network_term_matches_layer_oracle():
    for d_x in (1, 2, 7):
        layers = [(d_x, 128), (128, 64), (64, 2 * d_x)]
        explicit = sum(a * b + b for a, b in layers)
        assert 258 * d_x + 8384 == explicit
        assert count_parameters("etgpssm", d_x, 5) - (5 * d_x + 3 + 5 + 25) == explicit
    assert FlowNet(1).n_weights() == 8642


@pytest.mark.parametrize("variant", ["etgpssm-dnn", "gpssm-independent"])
def test_introspected_counts_agree(variant):
    d_x, M = 3, 7
    counts = count_model_parameters(build_model(variant, d_x, d_x, M=M))
    assert counts["gp"] + counts["nn"] == count_parameters(variant, d_x, M)


def test_count_contracts():
    with pytest.raises(ContractViolation):
        count_parameters("ad-enkf-dnn", 3, 10)
    with pytest.raises(ContractViolation):
        count_parameters("etgpssm", 0, 10)
    with pytest.raises(ContractViolation):
        count_parameters("shared", 3, 10)


def test_time_transition_is_positive():
    assert time_transition("etgpssm", 2, M=5, repetitions=1, N=10) > 0.0
    with pytest.raises(ContractViolation):
        time_transition("etgpssm", 2, M=5, repetitions=0)


def test_scaling_study_frame():
    frame = scaling_study(["etgpssm"], dims=[1, 2], M=4, repetitions=1, N=8)
    assert list(frame.columns) == ["variant", "d_x", "M", "param_count", "median_seconds"]
    assert list(frame["d_x"]) == [1, 2]
    assert list(frame["param_count"]) == [count_parameters("etgpssm", d, 4) for d in (1, 2)]


@pytest.mark.slow
def test_shared_gp_scales_better_than_independent_gps():
    ratios = {
        family: time_transition(family, 50, M=100, repetitions=11) / time_transition(family, 5, M=100, repetitions=11)
        for family in ("etgpssm", "gpssm-independent")
    }
    assert ratios["etgpssm"] < 3.0
    assert ratios["gpssm-independent"] > 5.0


def test_shared_gp_cost_is_flat_in_the_state_dimension():
    # small M and N keep this in the default run; the ranking must already show
    ratios = {
        family: time_transition(family, 50, M=30, repetitions=7, N=50) / time_transition(family, 5, M=30, repetitions=7, N=50)
        for family in ("etgpssm", "gpssm-independent")
    }
    assert ratios["etgpssm"] < 3.0
    assert ratios["gpssm-independent"] > ratios["etgpssm"]


def test_kernel_graph_stays_two_dimensional():
    kernel = SEKernel(50)
    X = np.random.default_rng(0).standard_normal((200, 50))
    K = kernel_eval(kernel, X, X[:30])
    # every node on the tape stays at most (n, d) or (n, m) sized
    seen, stack = set(), [K]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        assert node.values.ndim <= 2
        stack.extend(node._parents)
    assert K.shape == (200, 30)
