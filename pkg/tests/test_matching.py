"""Cost matrix and Hungarian solver checks against a brute-force oracle."""

import itertools

import numpy as np
import pytest

from text2table.matching import (
    Assignment,
    PaddedTargets,
    assign_targets,
    build_cost_matrix,
    first_cell_length,
    format_assignment,
    hungarian,
    pad_targets,
)
from text2table.model import ModelConfig, ModelParams, cross_context, encode, run_header_teacher_forced
from text2table.tokenizer import BOS, EOS, NULL, SEP


def brute_force_total(cost):
    n = cost.shape[0]
    idx = np.arange(n)
    return min(float(np.sum(cost[idx, perm])) for perm in itertools.permutations(range(n)))


def brute_force_best_perms(cost):
    n = cost.shape[0]
    idx = np.arange(n)
    best = brute_force_total(cost)
    return [
        perm
        for perm in itertools.permutations(range(n))
        if float(np.sum(cost[idx, perm])) == best
    ]


def test_first_cell_length_stops_at_separator():
    assert first_cell_length([7, 8, SEP, 9, EOS]) == 2
    assert first_cell_length([7, 8, 9, EOS]) == 3  # single-column row
    assert first_cell_length([SEP, 9, EOS]) == 0
    assert first_cell_length([]) == 0


def test_pad_targets_marks_nulls():
    t = pad_targets([[7, SEP, 8, EOS], [9, EOS]], m=4)
    assert t.n_slots == 4
    assert t.n_real == 2
    assert t.is_null == (False, False, True, True)
    assert t.rows[2] == (NULL,)
    assert t.first_cell_len == (1, 1, 0, 0)


def test_pad_targets_rejects_overflow_and_empty_rows():
    with pytest.raises(ValueError, match="exceed"):
        pad_targets([[7, EOS]] * 3, m=2)
    with pytest.raises(ValueError, match="empty"):
        pad_targets([[]], m=2)


def test_cost_matrix_all_null_targets_is_zero():
    probs = np.random.default_rng(0).random((3, 2, 8))
    t = pad_targets([], m=3)
    assert np.array_equal(build_cost_matrix(probs, t), np.zeros((3, 3)))


def test_cost_matrix_direct_substitution():
    # slot 1 puts probability 1 on target 1's two first-cell tokens and
    # probability 0.5 on target 2's single token
    v = 10
    probs = np.zeros((2, 3, v))
    probs[0, 0, 7] = 1.0
    probs[0, 1, 8] = 1.0
    probs[0, 0, 9] = 0.5
    t = pad_targets([[7, 8, SEP, 6, EOS], [9, EOS]], m=2)
    c = build_cost_matrix(probs, t)
    assert c[0, 0] == -2.0
    assert c[0, 1] == -0.5
    assert c[1, 0] == 0.0 and c[1, 1] == 0.0


def test_cost_matrix_matches_naive_rescoring():
    rng = np.random.default_rng(1)
    v = 12
    probs = rng.random((5, 4, v))
    rows = [
        [7, 8, SEP, 9, EOS],
        [10, EOS],
        [11, 7, 6, SEP, 8, EOS],
    ]
    t = pad_targets(rows, m=5)
    c = build_cost_matrix(probs, t)
    for j in range(5):
        for m in range(5):
            if t.is_null[j]:
                assert c[m, j] == 0.0
                continue
            expected = -sum(
                probs[m, k, t.rows[j][k]] for k in range(t.first_cell_len[j])
            )
            assert c[m, j] == pytest.approx(expected, abs=1e-15)


def test_cost_matrix_rejects_short_rollout():
    probs = np.zeros((2, 1, 8))
    t = pad_targets([[6, 7, SEP, 5, EOS]], m=2)  # first cell needs 2 steps
    with pytest.raises(ValueError, match="rollout length"):
        build_cost_matrix(probs, t)


def test_hungarian_prefers_diagonal():
    n = 4
    c = np.zeros((n, n))
    np.fill_diagonal(c, -1.0)
    a = hungarian(c)
    assert a.perm == tuple(range(n))
    assert a.total_cost == -float(n)


def test_hungarian_tie_break_is_lexicographically_smallest():
    a = hungarian(np.zeros((3, 3)))
    assert a.perm == (0, 1, 2)

    # both (0,1) and (1,0) cost -2; the lexicographically smaller wins
    c = np.array([[-1.0, -1.0], [-1.0, -1.0]])
    assert hungarian(c).perm == (0, 1)

    # optimum forces slot 0 away from column 0
    c = np.array([[0.0, -5.0], [0.0, 0.0]])
    assert hungarian(c).perm == (1, 0)


def test_hungarian_tie_break_on_crafted_multi_optimum():
    # four optimal permutations; lexicographic refinement must pick the least
    c = np.array(
        [
            [1.0, 1.0, 5.0],
            [1.0, 1.0, 5.0],
            [5.0, 5.0, 2.0],
        ]
    )
    best = brute_force_best_perms(c)
    a = hungarian(c)
    assert a.perm == min(best)
    assert a.total_cost == brute_force_total(c)


def test_hungarian_matches_brute_force_on_random_matrices():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        c = rng.normal(0.0, 3.0, size=(n, n))
        a = hungarian(c)
        assert a.total_cost == brute_force_total(c)
        assert sorted(a.perm) == list(range(n))


def test_hungarian_exact_on_integer_costs_with_unique_optimum():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        c = rng.integers(-50, 50, size=(n, n)).astype(np.float64)
        best = brute_force_best_perms(c)
        a = hungarian(c)
        if len(best) == 1:
            assert a.perm == best[0]
        assert a.total_cost == brute_force_total(c)


def test_hungarian_total_invariant_under_column_permutation():
    rng = np.random.default_rng(4)
    c = rng.normal(size=(6, 6))
    base = hungarian(c).total_cost
    for _ in range(10):
        order = rng.permutation(6)
        assert hungarian(c[:, order]).total_cost == pytest.approx(base, abs=1e-12)


def test_hungarian_rejects_bad_input():
    with pytest.raises(ValueError, match="square"):
        hungarian(np.zeros((2, 3)))
    bad = np.zeros((2, 2))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        hungarian(bad)


def test_identical_slots_still_map_one_to_one():
    # two slots emit the same first cell; the matching may not reuse a target
    c = np.array(
        [
            [-3.0, -3.0, 0.0],
            [-3.0, -3.0, 0.0],
            [0.0, 0.0, -1.0],
        ]
    )
    a = hungarian(c)
    assert sorted(a.perm) == [0, 1, 2]
    assert a.perm == (0, 1, 2)
    assert a.total_cost == -7.0


def test_hungarian_handles_subnormal_and_negative_zero():
    c = np.array([[-0.0, 5e-324], [5e-324, -0.0]])
    a = hungarian(c)
    assert a.total_cost == brute_force_total(c)


CFG = ModelConfig(
    encoder_layers=1,
    decoder_layers=1,
    model_dim=16,
    heads=2,
    ffn_dim=32,
    max_rows=3,
    max_pos=32,
    max_cols=4,
    vocab_size=30,
)


def _prepped(seed=0):
    params = ModelParams.create(CFG, seed)
    ctx = cross_context(params, CFG, [encode(params, CFG, [7, 8, 9])])
    _, hstate = run_header_teacher_forced(params, CFG, ctx, np.array([[BOS, 8, SEP, 9]]))
    return params, ctx, hstate


def test_assign_targets_single_real_target():
    params, ctx, hstate = _prepped()
    t = pad_targets([[7, 8, SEP, 9, EOS]], m=CFG.max_rows)
    a = assign_targets(params, CFG, ctx, hstate, t)
    assert sorted(a.perm) == [0, 1, 2]
    real_slots = [m for m in range(3) if a.perm[m] == 0]
    assert len(real_slots) == 1


def test_assign_targets_cost_invariant_under_target_order():
    params, ctx, hstate = _prepped(seed=1)
    rows = [[7, SEP, 9, EOS], [8, SEP, 10, EOS], [11, SEP, 12, EOS]]
    base = assign_targets(params, CFG, ctx, hstate, pad_targets(rows, CFG.max_rows))
    for order in itertools.permutations(range(3)):
        shuffled = pad_targets([rows[i] for i in order], CFG.max_rows)
        a = assign_targets(params, CFG, ctx, hstate, shuffled)
        assert a.total_cost == pytest.approx(base.total_cost, abs=1e-12)


def test_assign_targets_leaves_gradients_untouched():
    params, ctx, hstate = _prepped(seed=2)
    grads_before = [t.grad for t in params.registry().values()]
    assert all(g is None for g in grads_before)
    assign_targets(params, CFG, ctx, hstate, pad_targets([[7, EOS]], m=CFG.max_rows))
    assert all(t.grad is None for t in params.registry().values())


def test_format_assignment_marks_chosen_entries():
    c = np.array([[-1.0, 0.0], [0.0, -1.0]])
    text = format_assignment(c, hungarian(c))
    lines = text.splitlines()
    assert "total cost" in lines[0]
    assert lines[1].count("*") == 1
    assert lines[2].count("*") == 1
