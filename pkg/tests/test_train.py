import numpy as np
import numpy.testing as npt
import pytest

from advmtl import autodiff as ad
from advmtl import data as D
from advmtl import models as M
from advmtl import nn
from advmtl import train as T
from advmtl.autodiff import Tape
from advmtl.errors import ConfigError, ContractError, InputError, NumericError


def toy_task(seed=0, n_train=200, n_dev=100, n_test=100, name="toy"):
    """Linearly separable single task: all tokens share the sentence's sign."""
    rng = np.random.default_rng(seed)
    pos_pool = list(range(2, 7))
    neg_pool = list(range(7, 12))

    def make(n):
        out = []
        for _ in range(n):
            label = int(rng.integers(2))
            pool = pos_pool if label else neg_pool
            out.append(D.Example([int(rng.choice(pool)) for _ in range(4)], label))
        return out

    return D.TaskDataset(name=name, n_classes=2, train=make(n_train),
                         dev=make(n_dev), test=make(n_test))


def toy_model(scheme="fs", K=1, d=8, seed=0, vocab=12, emb_scale=1.0):
    config = M.ModelConfig(scheme=scheme, task_names=tuple(f"t{i}" for i in range(K))
                           if K > 1 else ("toy",),
                           classes=(2,) * K, hidden_size=d, embed_size=d,
                           vocab_size=vocab)
    emb = np.random.default_rng(99).normal(0.0, emb_scale, (vocab, d))
    return M.init_model(config, seed=seed, embedding_matrix=emb), config


class TestSgdStep:
    def _params(self):
        params, _ = toy_model()
        return params

    def test_zero_gradients_unchanged(self):
        params = self._params()
        before = {n: a.copy() for n, a in params.named_tensors().items()}
        grads = {n: np.zeros_like(a) for n, a in params.named_tensors().items()}
        T.sgd_step(params, grads, lr=0.5, clip_norm=5.0)
        for n, a in params.named_tensors().items():
            npt.assert_array_equal(a, before[n])

    def test_basic_arithmetic(self):
        params = self._params()
        params.shared.b[...] = 1.0
        grads = {"shared.b": np.full_like(params.shared.b, 0.5)}
        T.sgd_step(params, grads, lr=0.01)
        npt.assert_allclose(params.shared.b, 0.995, rtol=0, atol=1e-15)

    def test_global_norm_clipping_halves(self):
        params = self._params()
        params.shared.b[...] = 0.0
        g = np.zeros_like(params.shared.b)
        g[0] = 10.0  # global norm 10, clip 5 -> effective gradient 5
        T.sgd_step(params, {"shared.b": g}, lr=1.0, clip_norm=5.0)
        assert params.shared.b[0] == -5.0

    def test_nan_gradient_names_parameter(self):
        params = self._params()
        g = np.zeros_like(params.shared.W)
        g[0, 0] = np.nan
        with pytest.raises(NumericError, match="shared.W"):
            T.sgd_step(params, {"shared.W": g}, lr=0.1)

    def test_frozen_gradient_rejected(self):
        params = self._params()
        params.frozen = frozenset({"shared.W"})
        with pytest.raises(ContractError, match="shared.W"):
            T.sgd_step(params, {"shared.W": np.zeros_like(params.shared.W)}, lr=0.1)

    def test_zero_lr_bitwise_unchanged(self):
        params = self._params()
        before = {n: a.tobytes() for n, a in params.named_tensors().items()}
        grads = {n: np.random.default_rng(0).normal(size=a.shape)
                 for n, a in params.named_tensors().items()}
        for _ in range(3):
            T.sgd_step(params, grads, lr=0.0, clip_norm=float("inf"))
        for n, a in params.named_tensors().items():
            assert a.tobytes() == before[n]

    def test_step_changes_exactly_the_trainable_set(self):
        params = self._params()
        params.frozen = frozenset({"shared.W", "shared.b"})
        before = {n: a.tobytes() for n, a in params.named_tensors().items()}
        grads = {n: np.ones_like(a) for n in params.trainable_names()
                 for a in [params.named_tensors()[n]]}
        T.sgd_step(params, grads, lr=0.1)
        for n, a in params.named_tensors().items():
            changed = a.tobytes() != before[n]
            assert changed == (n in params.trainable_names())


class TestTrainingLoop:
    def test_fixed_batch_loss_monotone(self):
        ds = toy_task()
        params, config = toy_model()
        batch = D.Batch(task=0, sequences=[e.tokens for e in ds.train[:16]],
                        labels=[e.label for e in ds.train[:16]])
        cfg = T.TrainConfig(learning_rate=0.001, max_epochs=1, seed=0)
        losses = []
        from advmtl.train import _batch_terms, _combine, _leaf_grads
        for _ in range(50):
            tape = Tape()
            bound = params.bind(tape)
            l_ce, l_adv, l_diff = _batch_terms(tape, bound, config, batch, cfg)
            total = _combine(tape, l_ce, l_adv, l_diff, 0, cfg)
            losses.append(float(total.value))
            T.sgd_step(params, _leaf_grads(tape, bound, total),
                       cfg.learning_rate, cfg.clip_norm)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_toy_task_reaches_low_dev_error(self):
        ds = toy_task()
        params, config = toy_model()
        cfg = T.TrainConfig(learning_rate=0.3, max_epochs=20, patience=20,
                            batch_size=16, seed=0)
        best, hist = T.train_multitask(params, config, {"toy": ds}, cfg)
        assert hist.mean_dev_error(hist.best_epoch) < 0.05

    def test_determinism_bitwise(self, tmp_path):
        ds = toy_task()

        def run(path):
            params, config = toy_model()
            cfg = T.TrainConfig(learning_rate=0.1, max_epochs=3, patience=3, seed=4)
            best, hist = T.train_multitask(params, config, {"toy": ds}, cfg)
            hist.to_csv(path)
            ckpt = tmp_path / f"{path.name}.bin"
            M.save_checkpoint(ckpt, best, config)
            return path.read_text(), ckpt.read_bytes()

        a = run(tmp_path / "a.csv")
        b = run(tmp_path / "b.csv")
        assert a == b

    def test_early_stop_returns_best_checkpoint(self):
        ds = toy_task()
        params, config = toy_model()
        cfg = T.TrainConfig(learning_rate=0.3, max_epochs=10, patience=2, seed=1)
        best, hist = T.train_multitask(params, config, {"toy": ds}, cfg)
        per_epoch = [hist.mean_dev_error(e) for e in hist.epochs()]
        assert hist.best_epoch == int(np.argmin(per_epoch))
        err_now = T.evaluate(best, config, ds.dev, 0)
        assert abs(err_now - min(per_epoch)) < 1e-12

    def test_divergence_aborts_retaining_checkpoint(self):
        # saturating gates and the clamped log keep honest runs finite, so
        # inject the NaN directly (e.g. a corrupted warm-start checkpoint)
        ds = toy_task()
        params, config = toy_model()
        params.shared.W[0, 0] = np.nan
        cfg = T.TrainConfig(learning_rate=0.1, max_epochs=5, patience=5, seed=0)
        best, hist = T.train_multitask(params, config, {"toy": ds}, cfg)
        assert hist.diverged
        assert hist.records == [] and hist.best_epoch == -1

    def test_nan_loss_raises_numeric_error(self):
        from advmtl.train import _train_one_batch
        ds = toy_task()
        params, config = toy_model()
        params.embeddings.matrix[:, 0] = np.nan
        batch = D.Batch(task=0, sequences=[ds.train[0].tokens],
                        labels=[ds.train[0].label])
        with pytest.raises(NumericError):
            _train_one_batch(params, config, batch,
                             T.TrainConfig(max_epochs=1, seed=0))

    def test_asp_lambda_gamma_zero_matches_sp_gradients(self):
        # same parameters and batch: gradients of every shared tensor agree
        from advmtl.train import _batch_terms, _combine, _leaf_grads
        spec = D.SynthSpec(tasks=2, sentences_per_task=40, seed=2)
        raw, _ = D.generate_synthetic(spec)
        corpus, vocab = D.encode_corpus(raw)
        names = tuple(sorted(corpus))
        batch = D.Batch(task=1, sequences=[e.tokens for e in corpus[names[1]].train[:8]],
                        labels=[e.label for e in corpus[names[1]].train[:8]])

        def grads_for(scheme):
            config = M.ModelConfig(scheme=scheme, task_names=names, classes=(2, 2),
                                   hidden_size=6, embed_size=6, vocab_size=len(vocab))
            params = M.init_model(config, seed=3)
            cfg = T.TrainConfig(adv_weight=0.0, diff_weight=0.0, seed=0)
            tape = Tape()
            bound = params.bind(tape)
            l_ce, l_adv, l_diff = _batch_terms(tape, bound, config, batch, cfg)
            total = _combine(tape, l_ce, l_adv, l_diff, batch.task, cfg)
            return _leaf_grads(tape, bound, total)

        sp = grads_for("sp")
        asp = grads_for("asp")
        for name, g in sp.items():
            npt.assert_array_equal(g, asp[name], err_msg=name)

    def test_unlabeled_batches_require_adversary(self):
        ds = toy_task()
        params, config = toy_model("fs")
        cfg = T.TrainConfig(max_epochs=1, use_unlabeled=True, seed=0)
        best, hist = T.train_multitask(params, config, {"toy": ds}, cfg)
        assert len(hist.records) == 1  # unlabeled silently unused without disc

    def test_asp_with_unlabeled_runs(self):
        spec = D.SynthSpec(tasks=2, sentences_per_task=60, unlabeled_per_task=30,
                           seed=5)
        raw, _ = D.generate_synthetic(spec)
        corpus, vocab = D.encode_corpus(raw)
        names = tuple(sorted(corpus))
        config = M.ModelConfig(scheme="asp", task_names=names, classes=(2, 2),
                               hidden_size=6, embed_size=6, vocab_size=len(vocab))
        params = M.init_model(config, seed=1)
        cfg = T.TrainConfig(max_epochs=2, patience=2, seed=1, use_unlabeled=True)
        best, hist = T.train_multitask(params, config, corpus, cfg)
        assert len(hist.records) == 4
        assert all(np.isfinite(r.train_loss) for r in hist.records)

    def test_alternating_mode_runs(self):
        spec = D.SynthSpec(tasks=2, sentences_per_task=40, seed=6)
        raw, _ = D.generate_synthetic(spec)
        corpus, vocab = D.encode_corpus(raw)
        names = tuple(sorted(corpus))
        config = M.ModelConfig(scheme="asp", task_names=names, classes=(2, 2),
                               hidden_size=5, embed_size=5, vocab_size=len(vocab))
        params = M.init_model(config, seed=1)
        cfg = T.TrainConfig(max_epochs=1, patience=1, seed=1, alternating=True)
        best, hist = T.train_multitask(params, config, corpus, cfg)
        assert len(hist.records) == 2


class TestEvaluate:
    def test_all_correct_and_exact_fraction(self):
        ds = toy_task(seed=3, n_dev=400)
        params, config = toy_model(seed=3)
        tape = Tape()
        preds = []
        for ex in ds.dev:
            t = Tape()
            res = M.forward(t, params.bind(t), config, ex.tokens, 0, want_disc=False)
            preds.append(int(np.argmax(res.class_probs.value)))
        aligned = [D.Example(ex.tokens, p) for ex, p in zip(ds.dev, preds)]
        assert T.evaluate(params, config, aligned, 0) == 0.0
        flipped = [D.Example(ex.tokens, ex.label) for ex in aligned]
        for i in (7, 200):
            flipped[i] = D.Example(flipped[i].tokens, 1 - flipped[i].label)
        assert T.evaluate(params, config, flipped, 0) == pytest.approx(2 / 400)

    def test_empty_split_rejected(self):
        params, config = toy_model()
        with pytest.raises(InputError):
            T.evaluate(params, config, [], 0)


class TestGridSearch:
    def test_single_cell_equals_plain_training(self):
        ds = toy_task()
        base = T.TrainConfig(learning_rate=0.3, max_epochs=3, patience=3, seed=2)

        def factory():
            return toy_model(seed=5)

        result = T.grid_search(factory, {"toy": ds}, {"learning_rate": [0.3]}, base)
        params, config = factory()
        best, hist = T.train_multitask(params, config, {"toy": ds}, base)
        assert result.cells == [({"learning_rate": 0.3},
                                 hist.mean_dev_error(hist.best_epoch))]
        for n, a in best.named_tensors().items():
            npt.assert_array_equal(a, result.best_params.named_tensors()[n])

    def test_hopeless_cell_loses(self):
        # an absurd learning rate saturates the model near chance; the
        # selection rule must pick the sane cell
        ds = toy_task()
        base = T.TrainConfig(learning_rate=0.3, max_epochs=3, patience=3, seed=2,
                             clip_norm=1e12)

        def factory():
            return toy_model(seed=5)

        result = T.grid_search(factory, {"toy": ds},
                               {"learning_rate": [1e9, 0.3]}, base)
        assert result.best_index == 1
        assert result.cells[1][1] < result.cells[0][1]


class TestTransferTraining:
    def test_frozen_shared_bitwise_unchanged(self):
        ds = toy_task()
        shared = nn.init_lstm(np.random.default_rng(8), 8, 8)
        w_bytes, b_bytes = shared.W.tobytes(), shared.b.tobytes()
        cfg = T.TrainConfig(learning_rate=0.3, max_epochs=3, patience=3, seed=0)
        for mode in ("sc", "bc"):
            trained, tconfig, hist, err = T.train_transfer(
                shared, ds, mode, cfg, vocab_size=12, model_seed=1)
            assert trained.shared.W.tobytes() == w_bytes
            assert trained.shared.b.tobytes() == b_bytes
            assert 0.0 <= err <= 1.0

    def test_bc_head_reads_both_channels(self):
        ds = toy_task()
        shared = nn.init_lstm(np.random.default_rng(8), 8, 8)
        cfg = T.TrainConfig(learning_rate=0.3, max_epochs=1, patience=1, seed=0)
        trained, tconfig, _, _ = T.train_transfer(shared, ds, "bc", cfg,
                                                  vocab_size=12, model_seed=1)
        assert tconfig.head_input_size == 16


class TestProbe:
    def test_probe_reads_linear_structure(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(loc=(0, 0), size=(50, 2)),
                       rng.normal(loc=(3, 3), size=(50, 2))])
        y = [0] * 50 + [1] * 50
        W, b = T.fit_probe(X, y, 2, iters=200, lr=0.5)
        assert T.probe_accuracy(W, b, X, y) > 0.95

    def test_cosine_diagnostic_requires_private(self):
        params, config = toy_model("fs")
        with pytest.raises(ConfigError):
            T.shared_private_cosine(params, config, {}, "dev")
