"""Loss contracts, the training loop, and its determinism guarantees."""

import math

import numpy as np
import pytest

from text2table.autodiff import NumericError, Tape, ops
from text2table.matching import assign_targets, pad_targets
from text2table.model import ModelConfig, ModelParams, cross_context, encode
from text2table.tables import Table
from text2table.tokenizer import BOS, EOS, NEWROW, SEP, train_vocab
from text2table.training import (
    BatchInstance,
    MetricsRow,
    TrainConfig,
    _forward_batch,
    _pack_batches,
    body_loss,
    build_instance,
    header_loss,
    total_loss,
    train,
    validation_loss,
)

CFG = ModelConfig(
    encoder_layers=1,
    decoder_layers=1,
    model_dim=16,
    heads=2,
    ffn_dim=32,
    max_rows=3,
    max_pos=48,
    max_cols=4,
    vocab_size=30,
)


def make_params(seed=0, cfg=CFG):
    return ModelParams.create(cfg, seed)


def make_ctx(params, cfg, source=(7, 8, 9)):
    return cross_context(params, cfg, [encode(params, cfg, list(source))])


def uniform_params(cfg=CFG):
    # zeroed output embedding makes every logit zero, i.e. a uniform model
    params = make_params(cfg=cfg)
    params.word_emb.data[:] = 0.0
    return params


def test_header_loss_uniform_model_is_tokens_times_log_vocab():
    cfg = ModelConfig(
        encoder_layers=1, decoder_layers=1, model_dim=16, heads=2, ffn_dim=32,
        max_rows=2, max_pos=16, max_cols=2, vocab_size=4,
    )
    params = uniform_params(cfg)
    ctx = cross_context(params, cfg, [encode(params, cfg, [1, 2])])
    loss, _ = header_loss(params, cfg, ctx, [1, 2, 3])
    assert loss.item() == pytest.approx(3 * math.log(4), rel=1e-12)


def test_header_loss_nonnegative_and_matches_naive_recomputation():
    params = make_params(seed=1)
    ctx = make_ctx(params, CFG)
    target = [8, SEP, 9, 12, NEWROW]
    loss, _ = header_loss(params, CFG, ctx, target)
    assert loss.item() >= 0.0

    from text2table.model import run_header_teacher_forced

    inputs = np.array([[BOS] + target[:-1]])  # BOS then shifted gold
    logits, _ = run_header_teacher_forced(params, CFG, ctx, inputs)
    naive = 0.0
    for k, tok in enumerate(target):
        row = logits.data[0, k]
        shifted = row - row.max()
        naive -= shifted[tok] - math.log(np.exp(shifted).sum())
    assert loss.item() == pytest.approx(naive, rel=1e-12)


def test_body_loss_all_null_uniform_model():
    params = uniform_params()
    ctx = make_ctx(params, CFG)
    _, hstate = header_loss(params, CFG, ctx, [8, NEWROW])
    targets = pad_targets([], m=CFG.max_rows)
    null_scale = 0.25
    loss = body_loss(
        params, CFG, ctx, hstate, targets, perm=(0, 1, 2), null_scale=null_scale
    )
    expected = CFG.max_rows * null_scale * math.log(CFG.vocab_size)
    assert loss.item() == pytest.approx(expected, rel=1e-12)


def test_body_loss_without_nulls_is_plain_cross_entropy_sum():
    params = make_params(seed=2)
    ctx = make_ctx(params, CFG)
    _, hstate = header_loss(params, CFG, ctx, [8, SEP, 9, NEWROW])
    rows = [(7, SEP, 10, EOS), (8, SEP, 11, EOS), (9, SEP, 12, EOS)]
    targets = pad_targets(rows, m=CFG.max_rows)
    loss = body_loss(
        params, CFG, ctx, hstate, targets, perm=(0, 1, 2), null_scale=1.0
    )

    from text2table.model import run_body_teacher_forced

    inputs = np.array(
        [[[BOS, 7, SEP, 10], [BOS, 8, SEP, 11], [BOS, 9, SEP, 12]]]
    )
    _, hstate2 = header_loss(params, CFG, ctx, [8, SEP, 9, NEWROW])
    logits = run_body_teacher_forced(params, CFG, ctx, hstate2, inputs)
    flat = ops.reshape(logits, (12, CFG.vocab_size))
    naive = ops.cross_entropy_rows(flat, np.array([t for row in rows for t in row]))
    assert loss.item() == pytest.approx(naive.item(), rel=1e-12)


def test_null_token_loss_scales_linearly_with_null_scale():
    params = make_params(seed=3)
    ctx = make_ctx(params, CFG)
    targets = pad_targets([(7, SEP, 10, EOS)], m=CFG.max_rows)

    def null_part(scale):
        _, hstate = header_loss(params, CFG, ctx, [8, NEWROW])
        full = body_loss(params, CFG, ctx, hstate, targets, (0, 1, 2), scale)
        _, hstate2 = header_loss(params, CFG, ctx, [8, NEWROW])
        real_only = body_loss(params, CFG, ctx, hstate2, targets, (0, 1, 2), 1e-12)
        return full.item() - real_only.item()

    assert null_part(1.0) == pytest.approx(4 * null_part(0.25), rel=1e-6)


def test_body_loss_invariant_under_target_row_permutation():
    params = make_params(seed=4)
    ctx = make_ctx(params, CFG, source=(7, 8, 9, 10))
    rows = [(7, SEP, 10, EOS), (12, SEP, 11, EOS), (15, SEP, 13, EOS)]

    def loss_for(order):
        _, hstate = header_loss(params, CFG, ctx, [8, SEP, 9, NEWROW])
        targets = pad_targets([rows[i] for i in order], m=CFG.max_rows)
        a = assign_targets(params, CFG, ctx, hstate, targets)
        return (
            body_loss(params, CFG, ctx, hstate, targets, a.perm, 0.3).item(),
            a.total_cost,
        )

    base_loss, base_cost = loss_for([0, 1, 2])
    import itertools

    for order in itertools.permutations(range(3)):
        loss, cost = loss_for(list(order))
        assert abs(loss - base_loss) < 1e-9
        assert cost == base_cost


def test_total_loss_endpoints_and_midpoint():
    from text2table.autodiff.tensor import Tensor

    h, b = Tensor(2.0), Tensor(4.0)
    assert total_loss(h, b, 0.0).item() == 4.0
    assert total_loss(h, b, 1.0).item() == 2.0
    assert total_loss(h, b, 0.5).item() == 3.0


def test_train_config_validation():
    with pytest.raises(ValueError, match="lambda"):
        TrainConfig(lambda_=1.5)
    with pytest.raises(ValueError, match="null_scale"):
        TrainConfig(null_scale=0.0)
    with pytest.raises(ValueError, match="null_scale"):
        TrainConfig(null_scale=1.2)
    with pytest.raises(ValueError, match="warmup"):
        TrainConfig(warmup_ratio=2.0)


def _tiny_pipeline():
    corpus = [
        "alice scored 3 points and 7 rebounds",
        "bob scored 5 points and 2 rebounds",
        "carol scored 9 points and 4 rebounds",
    ]
    vocab = train_vocab(corpus, max_size=300)
    cfg = ModelConfig(
        encoder_layers=1,
        decoder_layers=1,
        model_dim=24,
        heads=2,
        ffn_dim=48,
        max_rows=3,
        max_pos=64,
        max_cols=4,
        vocab_size=vocab.size,
    )
    tables = [
        Table(("player", "points"), (("alice", "3"), ("bob", "5"))),
        Table(("player", "points"), (("bob", "5"),)),
        Table(("player", "points"), (("carol", "9"), ("alice", "7"))),
    ]
    instances = [
        build_instance(vocab, cfg, src, tbl) for src, tbl in zip(corpus, tables)
    ]
    return vocab, cfg, instances


def test_build_instance_terminal_conventions():
    vocab, cfg, instances = _tiny_pipeline()
    inst = instances[0]
    assert inst.header_target[-1] == NEWROW
    assert NEWROW not in inst.header_target[:-1]
    for row in inst.body_rows:
        assert row[-1] == EOS
    assert inst.padded.n_slots == cfg.max_rows
    assert inst.padded.n_real == 2
    assert inst.source_ids[-1] == EOS
    assert inst.n_tokens == (
        len(inst.source_ids)
        + len(inst.header_target)
        + sum(len(r) for r in inst.body_rows)
    )


def test_build_instance_rejects_bad_inputs():
    vocab, cfg, _ = _tiny_pipeline()
    too_many = Table(("h",), tuple(((str(i),) for i in range(cfg.max_rows + 1))))
    with pytest.raises(ValueError, match="rows"):
        build_instance(vocab, cfg, "text", too_many)
    ragged = Table(("a", "b"), (("x",),))
    with pytest.raises(ValueError, match="ill-formed"):
        build_instance(vocab, cfg, "text", ragged)
    with pytest.raises(ValueError, match="max_pos"):
        build_instance(vocab, cfg, "word " * cfg.max_pos, Table(("h",), ()))


def test_pack_batches_respects_token_budget():
    vocab, cfg, instances = _tiny_pipeline()
    sizes = [inst.n_tokens for inst in instances]
    budget = sizes[0] + sizes[1]
    batches = _pack_batches([0, 1, 2], instances, budget)
    assert [[idx for idx, _ in b] for b in batches] == [[0, 1], [2]]
    # a single instance over budget still forms its own batch
    batches = _pack_batches([0, 1, 2], instances, 1)
    assert [[idx for idx, _ in b] for b in batches] == [[0], [1], [2]]


def test_overfit_single_instance():
    _, cfg, instances = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=0)
    tcfg = TrainConfig(
        lambda_=0.5, null_scale=0.2, lr=1e-2, warmup_ratio=0.05,
        max_tokens_per_batch=512, max_steps=200, seed=0,
    )
    result = train(params, instances[:1], tcfg)
    losses = [row.loss for row in result.metrics]
    assert losses[-1] < 0.1
    warmup = max(1, round(tcfg.warmup_ratio * tcfg.max_steps))
    post = losses[warmup:]
    drops = sum(1 for a, b in zip(post, post[1:]) if b < a)
    assert drops / (len(post) - 1) >= 0.9


def test_lambda_one_keeps_body_row_embeddings_frozen():
    _, cfg, instances = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=1)
    tcfg = TrainConfig(lambda_=1.0, max_steps=3, seed=0)
    for _ in range(3):
        with Tape() as tape:
            loss, _, _, _ = _forward_batch(
                params, cfg, [(0, instances[0])], tcfg
            )
            tape.backward(loss)
        g = params.row_emb.grad
        assert g is not None
        assert np.array_equal(g[1:], np.zeros_like(g[1:]))
        for t in params.registry().values():
            t.zero_grad()


def test_fixed_seed_training_is_bit_deterministic():
    _, cfg, instances = _tiny_pipeline()
    tcfg = TrainConfig(max_steps=8, max_tokens_per_batch=64, seed=7)

    def run():
        params = ModelParams.create(cfg, seed=3)
        return train(params, instances, tcfg)

    a, b = run(), run()
    assert set(a.best_arrays) == set(b.best_arrays)
    for name in a.best_arrays:
        assert np.array_equal(a.best_arrays[name], b.best_arrays[name]), name
    assert [r.as_tsv() for r in a.metrics] == [r.as_tsv() for r in b.metrics]


def test_metrics_rows_have_warmup_ramp_and_churn_range():
    _, cfg, instances = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=2)
    tcfg = TrainConfig(max_steps=10, warmup_ratio=0.5, seed=0)
    result = train(params, instances[:1], tcfg)
    rows = result.metrics
    assert rows[0].churn == 0.0  # nothing to compare on the first step
    assert all(0.0 <= r.churn <= 1.0 for r in rows)
    assert rows[0].lr == pytest.approx(tcfg.lr / 5)
    assert rows[-1].lr == pytest.approx(tcfg.lr)
    assert [r.step for r in rows] == list(range(1, 11))


def test_validation_checkpointing_tracks_best():
    _, cfg, instances = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=4)
    tcfg = TrainConfig(max_steps=40, lr=3e-3, seed=0)
    result = train(params, instances[:1], tcfg, val_set=instances[:1])
    assert result.best_step > 0
    assert math.isfinite(result.best_val_loss)
    final_val = validation_loss(params, cfg, instances[:1], tcfg)
    assert result.best_val_loss <= final_val + 1e-9


def test_metrics_file_layout(tmp_path):
    _, cfg, instances = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=5)
    path = tmp_path / "metrics.tsv"
    train(params, instances[:1], TrainConfig(max_steps=3, seed=0), metrics_path=str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "step\tL_h\tL_b\tL\tlr\tchurn"
    assert len(lines) == 4
    first = lines[1].split("\t")
    assert first[0] == "1"
    assert len(first) == 6


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_step_diagnostics():
    _, cfg, instances = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=6)
    params.word_emb.data[:] = np.nan  # poison the forward pass on purpose
    with pytest.raises(NumericError, match="step 0"):
        train(params, instances[:1], TrainConfig(max_steps=2, seed=0))


def test_empty_dataset_rejected():
    _, cfg, _ = _tiny_pipeline()
    params = ModelParams.create(cfg, seed=0)
    with pytest.raises(ValueError, match="empty"):
        train(params, [], TrainConfig(max_steps=1))
