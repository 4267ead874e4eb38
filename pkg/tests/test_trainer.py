import numpy as np
import pytest

from desknmt import tensor as T
from desknmt.errors import ConfigError, IntegrityError, TrainingError
from desknmt.tokenizer import PAD
from desknmt.trainer import (
    BatchStream,
    HistoryRow,
    NoamSchedule,
    OptimizerState,
    TrainConfig,
    adam_step,
    load_checkpoint,
    lr_at,
    make_batches,
    read_history,
    save_checkpoint,
    train,
    write_history,
)
from desknmt.transformer import TransformerParams, init_params

from micro import micro_config, random_ids
from overfit import run_overfit


def toy_data(n=10, seed=0, vocab=11, length=5):
    rng = np.random.default_rng(seed)
    src = random_ids(rng, n, length, vocab)
    tgt = random_ids(rng, n, length, vocab)
    strip = lambda row: [int(t) for t in row if t != PAD]
    return [(strip(s), strip(t)) for s, t in zip(src, tgt)]


def quick_cfg(**kw):
    base = dict(micro_batch_size=2, effective_batch_size=4, max_steps=3, lr_scale=1.0,
                warmup_steps=2, eval_every=0)
    base.update(kw)
    return TrainConfig(**base)


class TestConfigAndSchedule:
    def test_full_size_defaults(self):
        c = TrainConfig()
        assert (c.micro_batch_size, c.effective_batch_size, c.max_steps) == (64, 384, 70_000)
        assert c.accumulation == 6
        assert (c.beta1, c.beta2, c.adam_eps, c.label_smoothing) == (0.9, 0.999, 1e-9, 0.0)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            TrainConfig(micro_batch_size=64, effective_batch_size=100)
        with pytest.raises(ConfigError):
            TrainConfig(max_steps=0)

    def test_lr_values(self):
        s = NoamSchedule(512, 4000, 1.0)
        assert lr_at(4000, s) == pytest.approx(6.988e-4, rel=1e-3)
        assert 512 ** -0.5 * 4000 ** -0.5 == pytest.approx(lr_at(4000, s), rel=1e-15)
        assert lr_at(1, s) < lr_at(4000, s)
        assert all(lr_at(k, s) < lr_at(k + 1, s) for k in range(1, 4000, 97))
        assert all(lr_at(k, s) > lr_at(k + 1, s) for k in range(4000, 9000, 97))
        with pytest.raises(ValueError):
            lr_at(0, s)


class TestBatching:
    def test_sizes(self):
        assert [len(b) for b in make_batches(toy_data(10), 4, seed=1)] == [4, 4, 2]

    def test_same_seed_same_order_and_full_epoch(self):
        a = make_batches(toy_data(10), 4, seed=3)
        b = make_batches(toy_data(10), 4, seed=3)
        assert [list(x.indices) for x in a] == [list(x.indices) for x in b]
        assert sorted(np.concatenate([x.indices for x in a]).tolist()) == list(range(10))
        c = make_batches(toy_data(10), 4, seed=3, epoch=1)
        assert [list(x.indices) for x in a] != [list(x.indices) for x in c]

    def test_padding_only_trails(self):
        for b in make_batches(toy_data(20, seed=2), 8, seed=0):
            for arr in (b.src, b.tgt):
                for row in arr:
                    real = np.flatnonzero(row != PAD)
                    assert real.max() == len(real) - 1

    def test_stream_cursor_resume(self):
        data = toy_data(7)
        s = BatchStream(data, 3, seed=5)
        seen = [next(s).indices.tolist() for _ in range(4)]
        cur = s.cursor
        rest = [next(s).indices.tolist() for _ in range(3)]
        s2 = BatchStream(data, 3, seed=5, cursor=cur)
        assert [next(s2).indices.tolist() for _ in range(3)] == rest
        assert cur[0] == 1 and len(seen) == 4


class TestAdam:
    def test_scalar_hand_example(self):
        p = TransformerParams(w=T.Tensor(np.array([0.5]), requires_grad=True))
        p["w"].grad = np.array([1.0])
        st = adam_step(p, OptimizerState.fresh(p), lr=0.1, eps=1e-9)
        # m_hat = 1, v_hat = 1: step = -0.1 * 1 / (1 + 1e-9)
        assert p["w"].data[0] == pytest.approx(0.5 - 0.1 / (1 + 1e-9), abs=1e-15)
        assert st.step == 1

    def test_zero_gradient(self):
        rng = np.random.default_rng(0)
        p = TransformerParams(
            w=T.Tensor(rng.standard_normal(3), requires_grad=True),
            src_embed=T.Tensor(rng.standard_normal((4, 2)), requires_grad=True),
        )
        st = OptimizerState.fresh(p)
        st.m["w"][:] = 1.0
        st.m["src_embed"][:] = 1.0
        before = {k: v.data.copy() for k, v in p.items()}
        adam_step(p, st, lr=0.1)
        assert np.all(p["w"].data != before["w"])  # dense params still move on momentum
        np.testing.assert_allclose(st.m["w"], 0.9)
        np.testing.assert_array_equal(st.m["src_embed"], 1.0)
        np.testing.assert_array_equal(p["src_embed"].data, before["src_embed"])

    def test_dense_zero_grad_leaves_params_when_moments_zero(self):
        p = TransformerParams(w=T.Tensor(np.ones(3), requires_grad=True))
        adam_step(p, OptimizerState.fresh(p), lr=0.1)
        np.testing.assert_array_equal(p["w"].data, np.ones(3))

    def test_lazy_rows(self):
        p = TransformerParams(tgt_embed=T.Tensor(np.zeros((4, 2)), requires_grad=True))
        p["tgt_embed"].grad = np.array([[0.0, 0.0], [1.0, -1.0], [0.0, 0.0], [0.0, 2.0]])
        st = adam_step(p, OptimizerState.fresh(p), lr=0.1)
        assert np.all(p["tgt_embed"].data[[0, 2]] == 0) and np.all(st.v["tgt_embed"][[0, 2]] == 0)
        assert np.all(p["tgt_embed"].data[1] != 0)

    def test_nan_names_parameter(self):
        p = TransformerParams(dec_w=T.Tensor(np.ones(2), requires_grad=True))
        p["dec_w"].grad = np.array([np.nan, 1.0])
        with pytest.raises(TrainingError, match="dec_w"):
            adam_step(p, OptimizerState.fresh(p), lr=0.1)

    def test_identical_params_identical_updates(self):
        rng = np.random.default_rng(1)
        g = rng.standard_normal(5)
        outs = []
        for _ in range(2):
            p = TransformerParams(w=T.Tensor(np.arange(5.0), requires_grad=True))
            st = OptimizerState.fresh(p)
            for _ in range(3):
                p["w"].grad = g.copy()
                adam_step(p, st, lr=0.01)
            outs.append(p["w"].data.copy())
            assert np.all(np.isfinite(outs[-1]))
        np.testing.assert_array_equal(outs[0], outs[1])


class TestTrain:
    def test_accumulation_equivalence(self):
        cfg = micro_config()
        data = toy_data(6)
        a, b = init_params(cfg, 0), init_params(cfg, 0)
        train(a, cfg, data, None, quick_cfg(micro_batch_size=2, effective_batch_size=6, max_steps=1))
        train(b, cfg, data, None, quick_cfg(micro_batch_size=6, effective_batch_size=6, max_steps=1))
        worst = max(np.abs(a[k].data - b[k].data).max() for k in a)
        assert worst <= 1e-8

    def test_default_accumulation_count(self):
        assert TrainConfig(micro_batch_size=64, effective_batch_size=384).accumulation == 6

    def test_single_step(self):
        cfg = micro_config()
        p = init_params(cfg, 0)
        before = {k: v.data.copy() for k, v in p.items()}
        r = train(p, cfg, toy_data(), None, quick_cfg(max_steps=1))
        assert r.step == 1 and r.state.step == 1 and len(r.history) == 1
        assert any(not np.array_equal(before[k], p[k].data) for k in p)

    def test_reproducible(self):
        cfg = micro_config(dropout_rate=0.2)
        h = []
        for _ in range(2):
            r = train(init_params(cfg, 4), cfg, toy_data(), None, quick_cfg(max_steps=4, seed=9))
            h.append([x.train_loss for x in r.history])
        assert h[0] == h[1]

    def test_resume_matches_uninterrupted(self, tmp_path):
        cfg = micro_config()
        data, dev = toy_data(9), toy_data(3, seed=1)
        full = init_params(cfg, 2)
        r_full = train(full, cfg, data, dev, quick_cfg(max_steps=5, eval_every=2))
        part = init_params(cfg, 2)
        train(part, cfg, data, dev, quick_cfg(max_steps=3, eval_every=2), out_dir=tmp_path)
        ckpt = load_checkpoint(tmp_path / "model.ckpt")
        assert ckpt.step == 3
        resumed = init_params(cfg, 99)
        r_res = train(resumed, cfg, data, dev, quick_cfg(max_steps=5, eval_every=2), resume=ckpt)
        assert [x.train_loss for x in r_res.history] == [x.train_loss for x in r_full.history]
        for k in full:
            np.testing.assert_array_equal(full[k].data, resumed[k].data)

    def test_resume_fingerprint_mismatch(self, tmp_path):
        cfg = micro_config()
        train(init_params(cfg, 0), cfg, toy_data(), None, quick_cfg(max_steps=1), out_dir=tmp_path)
        ckpt = load_checkpoint(tmp_path / "model.ckpt")
        with pytest.raises(ConfigError):
            train(init_params(cfg, 0), cfg, toy_data(), None, quick_cfg(max_steps=2, lr_scale=3.0), resume=ckpt)

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_non_finite_loss_aborts_with_diagnostic(self, tmp_path):
        cfg = micro_config()
        p = init_params(cfg, 0)
        p["out.b"].data[:] = np.inf
        with pytest.raises(TrainingError):
            train(p, cfg, toy_data(), None, quick_cfg(), out_dir=tmp_path)
        assert (tmp_path / "diagnostic.ckpt").exists()

    def test_early_stop(self):
        cfg = micro_config()
        r = train(init_params(cfg, 0), cfg, toy_data(), toy_data(3, seed=5),
                  quick_cfg(max_steps=50, lr_scale=0.0, eval_every=1, patience=2))
        assert r.stop_reason == "early_stop" and r.step == 3

    def test_history_csv(self, tmp_path):
        rows = [HistoryRow(1, 2.5, None, 1e-3), HistoryRow(2, 1.25, 0.1 + 0.2, 2e-3)]
        write_history(rows, tmp_path / "h.csv")
        assert (tmp_path / "h.csv").read_text().splitlines()[0] == "step,train_loss,dev_loss,lr"
        assert read_history(tmp_path / "h.csv") == rows


class TestCheckpoint:
    @pytest.fixture
    def trained(self, tmp_path):
        cfg = micro_config()
        p = init_params(cfg, 0)
        train(p, cfg, toy_data(), toy_data(2, seed=3), quick_cfg(max_steps=2, eval_every=1),
              out_dir=tmp_path, vocab_hashes={"src": "a", "tgt": "b"})
        return p, tmp_path / "model.ckpt"

    def test_round_trip_bit_identical(self, trained):
        p, path = trained
        ck = load_checkpoint(path)
        for k in p:
            assert ck.params[k].data.tobytes() == p[k].data.tobytes()
        assert ck.step == 2 and ck.state.step == 2
        assert ck.vocab_hashes == {"src": "a", "tgt": "b"}
        assert len(ck.history) == 2 and ck.history[0].dev_loss is not None

    def test_f32_round_trip(self, tmp_path):
        with T.precision("f32"):
            cfg = micro_config()
            p = init_params(cfg, 0)
            train(p, cfg, toy_data(), None, quick_cfg(max_steps=1), out_dir=tmp_path)
        ck = load_checkpoint(tmp_path / "model.ckpt")
        assert ck.params["out.w"].data.dtype == np.float32
        assert ck.params["out.w"].data.tobytes() == p["out.w"].data.tobytes()

    def test_header_layout(self, trained):
        _, path = trained
        blob = path.read_bytes()
        assert blob[:8] == b"DNMTCKPT"
        assert int.from_bytes(blob[8:12], "little") == 1

    @pytest.mark.parametrize("where", [0, 30, -100, -1])
    def test_corruption_detected(self, trained, tmp_path, where):
        _, path = trained
        blob = bytearray(path.read_bytes())
        blob[where] ^= 0xFF
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(bytes(blob))
        with pytest.raises(IntegrityError):
            load_checkpoint(bad)

    def test_truncated(self, trained, tmp_path):
        _, path = trained
        bad = tmp_path / "short.ckpt"
        bad.write_bytes(path.read_bytes()[:40])
        with pytest.raises(IntegrityError):
            load_checkpoint(bad)


@pytest.mark.slow
def test_overfit_moving_average_is_monotone():
    run = run_overfit()
    losses = np.array(run.losses)
    ma = np.convolve(losses, np.ones(50) / 50, mode="valid")
    assert np.all(np.diff(ma) <= 0)
    assert run.losses[-1] < 0.1
