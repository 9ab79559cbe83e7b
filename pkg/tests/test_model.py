import numpy as np
import pytest

from gner import autodiff as ad
from gner import model as M
from gner.corpus import (
    CorpusError,
    Sentence,
    Token,
    batch_from_sentences,
    build_char_vocab,
    conll_schema,
    germeval_schema,
)
from gner.crf import crf_negative_log_likelihood
from gner.datagen import make_corpus, make_embedding_store


def _toy_config(variant, schema=None, **overrides):
    defaults = dict(
        char_variant=variant,
        word_dim=8,
        char_emb_dim=4,
        char_cnn_filters=3,
        char_lstm_cells=4,
        token_lstm_cells=4,
        dropout=0.5,
    )
    defaults.update(overrides)
    return M.ModelConfig(label_schema=schema or conll_schema(), **defaults)


def _toy_setup(variant, n_sentences=3, seed=0):
    sents = make_corpus(n_sentences, seed=seed, with_subclasses=False)
    sents = [Sentence(s.tokens, [l.replace("OTH", "MISC") for l in s.outer_labels], None, s.source_id)
             for s in sents]
    vocab = build_char_vocab(sents)
    config = _toy_config(variant)
    model = M.build_model(config, vocab, seed=seed)
    store = make_embedding_store(sents, dim=8, seed=seed)
    batch = batch_from_sentences(sents, vocab, config.required_char_mode, config.min_char_pad)
    return model, store, batch, sents


def test_input_width_per_variant():
    schema = germeval_schema()
    assert M.ModelConfig(schema, char_variant="none").input_width == 307
    assert M.ModelConfig(schema, char_variant="cnn3").input_width == 403
    assert M.ModelConfig(schema, char_variant="bilstm").input_width == 407
    assert M.ModelConfig(schema, char_variant="cnn").input_width == 339
    assert M.ModelConfig(schema, char_variant="bilstm2").input_width == 407


def test_unknown_variant_rejected():
    with pytest.raises(M.ModelError, match="variant"):
        M.ModelConfig(conll_schema(), char_variant="transformer")


def test_eval_forward_is_deterministic():
    model, store, batch, _ = _toy_setup("bilstm")
    a = M.forward_emissions(model, batch, store, mode="eval").value
    b = M.forward_emissions(model, batch, store, mode="eval").value
    assert a.tobytes() == b.tobytes()


def test_emissions_shape_contract():
    model, store, batch, sents = _toy_setup("cnn")
    em = M.forward_emissions(model, batch, store, mode="eval")
    assert em.value.shape == (len(sents), batch.max_len, len(model.config.label_schema))


def test_char_mode_mismatch_rejected():
    model, store, _, sents = _toy_setup("bilstm")
    wrong = batch_from_sentences(sents, model.char_vocab, "cnn", 5)
    with pytest.raises(M.ModelError, match="char-mode"):
        M.forward_emissions(model, wrong, store, mode="eval")


def test_masked_positions_carry_zero_gradient_into_token_lstm():
    model, store, batch, sents = _toy_setup("bilstm")
    longest = max(len(s) for s in sents)
    assert any(len(s) < longest for s in sents), "need ragged lengths"

    em = M.forward_emissions(model, batch, store, mode="eval")
    # Select only masked rows; their gradient path into parameters must vanish.
    loss_terms = []
    for i, s in enumerate(sents):
        if len(s) < batch.max_len:
            loss_terms.append(ad.sum_all(ad.slice_(em, (i, slice(len(s), batch.max_len)))))
    total = loss_terms[0]
    for term in loss_terms[1:]:
        total = ad.add(total, term)
    grads = ad.backward(total)
    g = grads.get(model.token_fwd.w_input)
    # Masked outputs are exact zeros with no dependence on LSTM weights; only
    # the dense bias feeds them.
    assert g is None or not np.any(g)
    assert grads.get(model.token_fwd.w_recurrent) is None or not np.any(grads[model.token_fwd.w_recurrent])


def test_emissions_invariant_to_padding_length():
    model, store, _, sents = _toy_setup("bilstm")
    s = sents[0]
    cfg = model.config
    plain = batch_from_sentences([s], model.char_vocab, cfg.required_char_mode, cfg.min_char_pad)
    padded = batch_from_sentences([s], model.char_vocab, cfg.required_char_mode, cfg.min_char_pad,
                                  pad_to=len(s) + 5)
    em_plain = M.forward_emissions(model, plain, store, mode="eval").value[0, : len(s)]
    em_padded = M.forward_emissions(model, padded, store, mode="eval").value[0, : len(s)]
    np.testing.assert_allclose(em_plain, em_padded, atol=1e-12)


@pytest.mark.parametrize("variant", ["cnn", "bilstm"])
def test_batched_forward_matches_single_sentence(variant):
    # Equal-length tokens keep the char pad length identical across
    # batchings, so batched and per-sentence emissions must agree exactly;
    # this exercises the shared-feature scatter across a ragged batch.
    sents = [
        Sentence([Token(t) for t in ("Anna", "mag", "Ulm", ".")], ["B-PER", "O", "B-LOC", "O"]),
        Sentence([Token(t) for t in ("Omar", "ruft", "an", ".")], ["B-PER", "O", "O", "O"]),
        Sentence([Token(t) for t in ("hier", "ist", "es")], ["O", "O", "O"]),
    ]
    vocab = build_char_vocab(sents)
    config = _toy_config(variant)
    model = M.build_model(config, vocab, seed=4)
    store = make_embedding_store(sents, dim=8, seed=4)
    pad = max(len(t.text) for s in sents for t in s.tokens) + (4 if variant == "cnn" else 0)
    big = batch_from_sentences(sents, vocab, config.required_char_mode, config.min_char_pad,
                               char_pad_to=pad)
    em_big = M.forward_emissions(model, big, store, mode="eval").value
    for i, s in enumerate(sents):
        single = batch_from_sentences([s], vocab, config.required_char_mode, config.min_char_pad,
                                      char_pad_to=pad)
        em_one = M.forward_emissions(model, single, store, mode="eval").value
        np.testing.assert_allclose(em_big[i, : len(s)], em_one[0, : len(s)], atol=1e-12)


def test_variant_none_ignores_char_inputs():
    sents = make_corpus(3, seed=1, with_subclasses=False)
    sents = [Sentence(s.tokens, [l.replace("OTH", "MISC") for l in s.outer_labels], None, s.source_id)
             for s in sents]
    vocab = build_char_vocab(sents)
    config = _toy_config("none")
    model = M.build_model(config, None, seed=0)
    store = make_embedding_store(sents, dim=8)
    bare = batch_from_sentences(sents)
    with_chars = batch_from_sentences(sents, vocab, "rnn")
    a = M.forward_emissions(model, bare, store, mode="eval").value
    b = M.forward_emissions(model, with_chars, store, mode="eval").value
    np.testing.assert_array_equal(a, b)


def test_predict_single_token_and_schema_labels():
    model, store, _, _ = _toy_setup("cnn3")
    labels = M.predict(model, store, ["Adlerburg"])
    assert len(labels) == 1
    schema_labels = set(model.config.label_schema.labels)
    assert all(lab in schema_labels for lab in labels)
    with pytest.raises(M.ModelError, match="empty"):
        M.predict(model, store, [])


@pytest.mark.parametrize("variant", M.CHAR_VARIANTS)
def test_end_to_end_gradient_check_all_variants(variant):
    # Toy dims: word 8, casing 7, char 4, cells 4, L = 9 (conll schema), T <= 6.
    sents = [
        Sentence([Token(t) for t in ("Anna", "besucht", "Adlerburg", ".")],
                 ["B-PER", "O", "B-LOC", "O"]),
        Sentence([Token(t) for t in ("die", "Ulmwerke", "GmbH", "gewinnt", "heute", ".")],
                 ["O", "B-ORG", "I-ORG", "O", "O", "O"]),
    ]
    vocab = build_char_vocab(sents)
    config = _toy_config(variant)
    model = M.build_model(config, vocab if variant != "none" else None, seed=3)
    store = make_embedding_store(sents, dim=8, seed=3)
    batch = batch_from_sentences(sents, vocab, config.required_char_mode, config.min_char_pad)
    schema = config.label_schema

    def loss():
        em = M.forward_emissions(model, batch, store, mode="eval")
        total = None
        for i, s in enumerate(sents):
            gold = [schema.index_of(lab) for lab in s.outer_labels]
            term = crf_negative_log_likelihood(model.crf, ad.slice_(em, (i, slice(0, len(s)))), gold)
            total = term if total is None else ad.add(total, term)
        return total

    params = [node for _, node in model.parameters()]
    err = ad.check_gradient(loss, params, eps=1e-5, samples=60, rng=np.random.default_rng(0))
    assert err <= 1e-4, f"{variant}: max rel error {err}"


def test_save_load_round_trip_predictions(tmp_path):
    model, store, _, sents = _toy_setup("bilstm", n_sentences=5)
    path = tmp_path / "model.mner"
    M.save_model(model, path)
    loaded = M.load_model(path)
    for s in sents:
        assert M.predict(model, store, s.texts()) == M.predict(loaded, store, s.texts())
    # Serialized parameters are exactly the float32 rounding of the originals,
    # and a second save/load cycle is bit-stable.
    originals = dict(model.parameters())
    for name, node in loaded.parameters():
        expected = originals[name].value.astype("<f4").astype(np.float64)
        np.testing.assert_array_equal(node.value, expected)
    path2 = tmp_path / "model2.mner"
    M.save_model(loaded, path2)
    again = M.load_model(path2)
    for name, node in loaded.parameters():
        np.testing.assert_array_equal(node.value, dict(again.parameters())[name].value)


def test_load_rejects_bad_magic(tmp_path):
    model, _, _, _ = _toy_setup("cnn")
    path = tmp_path / "model.mner"
    M.save_model(model, path)
    raw = bytearray(path.read_bytes())
    raw[0:5] = b"XXXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(M.ModelFormatError, match="magic"):
        M.load_model(path)


def test_load_rejects_truncated_file(tmp_path):
    model, _, _, _ = _toy_setup("cnn")
    path = tmp_path / "model.mner"
    M.save_model(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 20])
    with pytest.raises(M.ModelFormatError, match="truncated"):
        M.load_model(path)


def test_schema_guard_on_foreign_labels(tmp_path):
    model, _, _, _ = _toy_setup("bilstm")  # conll schema
    path = tmp_path / "model.mner"
    M.save_model(model, path)
    loaded = M.load_model(path)
    with pytest.raises(CorpusError, match="LOCderiv"):
        loaded.config.label_schema.index_of("B-LOCderiv")
