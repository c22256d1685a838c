import numpy as np
import pytest

from conftest import tiny_model
from mixspeech import autodiff as ad
from mixspeech.gradcheck import numeric_grad, relative_error
from mixspeech.losses import Target, weighted_mtl
from mixspeech.models import ModelConfig, output_lengths
from mixspeech.vocab import SOS

FAMILIES = ["las_mini", "transformer_mini"]


def _logits(model, x, lengths, dec_in, rows=None):
    enc = model.encode(x, lengths)
    rows = np.zeros(len(dec_in), dtype=int) if rows is None else rows
    return model.decode_train(enc, rows, np.asarray(dec_in)).data


@pytest.mark.parametrize("family", FAMILIES)
def test_ctc_rows_follow_subsampling(family, rng):
    model = tiny_model(family)
    for t in range(7, 51, 6):
        enc = model.encode(rng.normal(size=(1, t, 5)), [t])
        expected = t if family == "las_mini" else -(-(-(-t // 2)) // 2)
        assert enc.ctc_logits.shape[1] == expected == output_lengths(model.cfg, [t])[0]


@pytest.mark.parametrize("family", FAMILIES)
def test_identical_utterances_give_identical_outputs(family, rng):
    model = tiny_model(family)
    u = rng.normal(size=(16, 5))
    x = np.stack([u, u])
    enc = model.encode(x, [16, 16])
    assert np.array_equal(enc.ctc_logits.data[0], enc.ctc_logits.data[1])
    out = model.decode_train(enc, [0, 1], np.array([[SOS, 3, 4], [SOS, 3, 4]])).data
    assert np.array_equal(out[0], out[1])


@pytest.mark.parametrize("family", FAMILIES)
def test_padding_has_no_effect_on_gradients(family, rng):
    model = tiny_model(family)
    u = rng.normal(size=(13, 5))
    padded = np.concatenate([u, 50 * rng.normal(size=(6, 5))])[None]
    grads = []
    for x in (u[None], padded):
        model.params.zero_grad()
        with ad.Tape() as tape:
            res = weighted_mtl(model, x, np.array([13]), [Target(0, [3, 4], 1.0)], 0.3,
                               normalizer=1)
        tape.backward(res.total)
        grads.append({k: (t.grad.copy() if t.grad is not None else 0) for k, t in
                      model.params.items()})
    for k in grads[0]:
        assert np.allclose(grads[0][k], grads[1][k], atol=1e-11, rtol=1e-9), k


@pytest.mark.parametrize("family", FAMILIES)
def test_decoder_is_causal(family, rng):
    model = tiny_model(family)
    x = rng.normal(size=(1, 20, 5))
    base = np.array([[SOS, 3, 4, 5, 6]])
    a = _logits(model, x, [20], base)
    for u in range(1, 5):
        changed = base.copy()
        changed[0, u] = 3 + (changed[0, u] - 2) % 4
        b = _logits(model, x, [20], changed)
        assert a.shape[1] == 5
        assert np.array_equal(a[0, :u], b[0, :u])
        assert not np.array_equal(a[0, u:], b[0, u:])


@pytest.mark.parametrize("family", FAMILIES)
def test_attention_weights_normalised(family, rng):
    model = tiny_model(family)
    model.record_attention = True
    _logits(model, rng.normal(size=(2, 18, 5)), [18, 11], [[SOS, 3, 4], [SOS, 5, 5]], [0, 1])
    assert model.attention
    for w in model.attention:
        assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_incremental_steps_match_teacher_forcing(family, rng):
    model = tiny_model(family)
    x = rng.normal(size=(1, 20, 5))
    dec_in = np.array([[SOS, 4, 3, 6]])
    enc = model.encode(x, [20])
    full = ad.log_softmax(model.decode_train(enc, [0], dec_in)).data[0]
    state = model.init_state(enc, 0, 1)
    for u in range(4):
        logp, state = model.step(state, [dec_in[0, u]])
        assert np.allclose(logp[0], full[u], atol=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_whole_model_gradient(family):
    r = np.random.default_rng(3)
    model = tiny_model(family, width=16, n_symbols=3)  # V = 6
    x = r.normal(size=(2, 12, 5))
    lengths = np.array([12, 9])
    targets = [Target(0, [3, 4], 1.0), Target(1, [5], 0.6), Target(1, [4, 3], 0.4)]

    def loss_value():
        return float(weighted_mtl(model, x, lengths, targets, 0.3, normalizer=2).total.data)

    model.params.zero_grad()
    with ad.Tape() as tape:
        res = weighted_mtl(model, x, lengths, targets, 0.3, normalizer=2)
    tape.backward(res.total)
    names = model.params.names()
    analytic, numeric = [], []
    for _ in range(20):
        name = names[int(r.integers(len(names)))]
        p = model.params[name]
        idx = tuple(int(r.integers(s)) for s in p.shape)
        analytic.append(p.grad[idx] if p.grad is not None else 0.0)
        numeric.append(numeric_grad(loss_value, p.data, coords=[idx])[0])
    assert relative_error(np.array(analytic), np.array(numeric)) < 1e-4


def test_init_depends_on_seed_and_shapes_only():
    a, b, c = tiny_model(seed=1), tiny_model(seed=1), tiny_model(seed=2)
    for k in a.params.names():
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params.names())
    bound = 1 / np.sqrt(5)
    assert np.all(np.abs(a.params["enc.0.fwd.wx"].data) <= bound)


def test_input_and_config_errors(rng):
    model = tiny_model()
    with pytest.raises(ValueError):
        model.encode(rng.normal(size=(1, 10, 4)), [10])
    enc = model.encode(rng.normal(size=(1, 10, 5)), [10])
    with pytest.raises(ValueError):
        model.decode_train(enc, [0], np.zeros((1, 0), dtype=int))
    with pytest.raises(ValueError):
        ModelConfig(vocab_size=2)
    with pytest.raises(ValueError):
        ModelConfig(family="rnn_t")


def test_desk_defaults():
    las = ModelConfig.desk_default("las_mini")
    assert (las.enc_layers, las.enc_width, las.dec_width) == (2, 64, 64)
    tr = ModelConfig.desk_default("transformer_mini")
    assert (tr.enc_layers, tr.dec_layers, tr.enc_width, tr.attention_heads) == (4, 2, 64, 4)
    assert ModelConfig.from_dict({k: str(v) for k, v in tr.to_dict().items()}) == tr
