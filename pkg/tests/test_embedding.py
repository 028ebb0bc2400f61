import numpy as np
import pytest

from conftest import TINY, random_features, tiny_model
from oracles import scalar_bilstm
from phideid.embedding import (
    PRETRAINED_INIT_SCALE, UNK, CharVocab, Config, EmbeddingError, TokenVocab, char_encode, embed,
    embed_sequence, encode_tokens, load_pretrained, read_word_vectors,
)
from phideid.neural.autodiff import Tape
from phideid.neural.optim import SgdConfig, sgd_step
from phideid.neural.rng import Rng

SURFACES = ["Seen", "by", "Dr", ".", "Lee", "on", "3/14", "seen", "x"]


def as_lists(p):
    return p.W.value.tolist(), p.U.value.tolist(), p.b.value.tolist()


def test_embedding_dims():
    cfg = Config()
    assert cfg.embedding_dim(52) == 25 + 100 + 50 == 175
    assert cfg.embedding_dim(0) == 150


def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(EmbeddingError):
        Config(d_token=0)
    with pytest.raises(EmbeddingError):
        Config(dropout_p=1.0)
    with pytest.raises(EmbeddingError, match="unknown"):
        Config.from_dict({"d_tokens": 3})
    (tmp_path / "c.json").write_text('{"d_token": 7, "max_epochs": 2}')
    cfg = Config.from_file(tmp_path / "c.json")
    assert cfg.d_token == 7 and Config.from_dict(cfg.to_dict()) == cfg


def test_vocabs():
    tokens = TokenVocab.build(["Lee", "lee", "Boston", "x"], extra=["Extra"])
    assert tokens.items[0] == UNK and tokens.lookup("LEE") == tokens.lookup("lee") != 0
    assert tokens.lookup("never-seen") == 0 and "extra" in tokens
    assert {tokens.items[i] for i in tokens.singletons()} == {"boston", "x"}
    chars = CharVocab.build(["ab", "c"])
    assert chars.encode("abz") == [chars.lookup("a"), chars.lookup("b"), 0]


def write_vectors(path, rows):
    path.write_text("".join(f"{w} {' '.join(map(str, v))}\n" for w, v in rows), encoding="utf-8")
    return path


def test_pretrained_rows_are_copied(tmp_path):
    path = write_vectors(tmp_path / "v.txt", [("lee", [1.0, 2.0, 3.0]), ("boston", [-1.0, 0.5, 0.25]),
                                              ("absent", [9.0, 9.0, 9.0])])
    vocab = TokenVocab.build(["Lee", "Boston", "seen"])
    table = load_pretrained(path, vocab, d_token=3, rng=Rng(4))
    assert table[vocab.lookup("Lee")].tolist() == [1.0, 2.0, 3.0]
    assert table[vocab.lookup("boston")].tolist() == [-1.0, 0.5, 0.25]
    missing = table[vocab.lookup("seen")]
    assert np.abs(missing).max() <= PRETRAINED_INIT_SCALE
    again = load_pretrained(path, vocab, d_token=3, rng=Rng(4))
    assert again.tobytes() == table.tobytes()


def test_pretrained_dimension_mismatch(tmp_path):
    path = write_vectors(tmp_path / "v.txt", [("lee", [1.0, 2.0])])
    with pytest.raises(EmbeddingError, match="expected 3"):
        load_pretrained(path, TokenVocab.build(["lee"]), d_token=3)


def test_malformed_vector_line_reports_line_number(tmp_path):
    path = tmp_path / "v.txt"
    path.write_text("a 1 2\nb 1 two\n")
    with pytest.raises(EmbeddingError, match=r"v\.txt:2:"):
        read_word_vectors(path)
    path.write_text("a 1 2\n\n")
    with pytest.raises(EmbeddingError, match=r":2:"):
        read_word_vectors(path)
    path.write_text("a 1 2\nb 1 2 3\n")
    with pytest.raises(EmbeddingError, match=r":2: vector has 3"):
        read_word_vectors(path)


def test_char_encode_matches_scalar_oracle():
    model = tiny_model(SURFACES)
    emb = model.emb
    H = TINY.d_char_lstm
    for surface in ("Lee", "3/14", "x", "Seen"):
        got = char_encode(surface, model.chars, emb)
        xs = emb.char_table.value[model.chars.encode(surface)].tolist()
        states = scalar_bilstm(as_lists(emb.char_fwd), as_lists(emb.char_bwd), xs)
        ref = states[-1][:H] + states[0][H:]
        np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)
        assert got.shape == (2 * H,)


def test_char_encode_errors_and_purity():
    model = tiny_model(SURFACES)
    with pytest.raises(EmbeddingError):
        char_encode("", model.chars, model.emb)
    a = char_encode("Lee", model.chars, model.emb)
    b = char_encode("Lee", model.chars, model.emb)
    assert a.tobytes() == b.tobytes()


def test_batched_embedding_matches_token_at_a_time():
    model = tiny_model(SURFACES)
    feats = random_features(Rng(9), len(SURFACES), 6)
    enc = encode_tokens(SURFACES, feats, model.chars, model.tokens)
    batched = embed_sequence(enc, model.emb, TINY).value
    ref = np.array([embed(s, f, model.chars, model.tokens, model.emb, TINY) for s, f in zip(SURFACES, feats)])
    assert batched.shape == (len(SURFACES), TINY.embedding_dim(6))
    np.testing.assert_allclose(batched, ref, rtol=0, atol=1e-12)


def test_dropout_only_in_training():
    model = tiny_model(SURFACES)
    f = np.ones(6)
    plain = embed("Lee", f, model.chars, model.tokens, model.emb, TINY)
    assert embed("Lee", f, model.chars, model.tokens, model.emb, TINY, Rng(1)).tobytes() == plain.tobytes()
    noisy = embed("Lee", f, model.chars, model.tokens, model.emb, TINY, Rng(1), training=True)
    assert not np.array_equal(noisy, plain)
    kept = noisy != 0
    np.testing.assert_allclose(noisy[kept], plain[kept] / (1 - TINY.dropout_p))
    with pytest.raises(EmbeddingError):
        embed("Lee", f, model.chars, model.tokens, model.emb, TINY, training=True)


def test_feature_flip_changes_embedding():
    model = tiny_model(SURFACES)
    f = np.zeros(6)
    g = f.copy()
    g[2] = 1.0
    a = embed("Lee", f, model.chars, model.tokens, model.emb, TINY)
    b = embed("Lee", g, model.chars, model.tokens, model.emb, TINY)
    d = TINY.d_feat
    assert not np.allclose(a[:d], b[:d])
    np.testing.assert_array_equal(a[d:], b[d:])


def test_feature_length_mismatch():
    model = tiny_model(SURFACES)
    with pytest.raises(EmbeddingError):
        embed("Lee", np.zeros(5), model.chars, model.tokens, model.emb, TINY)
    enc = encode_tokens(["Lee"], np.zeros((1, 5)), model.chars, model.tokens)
    with pytest.raises(EmbeddingError):
        embed_sequence(enc, model.emb, TINY)


def test_no_feature_schema_has_no_projection():
    model = tiny_model(SURFACES, n_features=0)
    assert model.emb.feat_W == [] and model.embedding_dim == TINY.embedding_dim(0)
    out = embed("Lee", [], model.chars, model.tokens, model.emb, TINY)
    assert out.shape == (TINY.d_token + 2 * TINY.d_char_lstm,)


def test_one_sgd_step_moves_every_block():
    model = tiny_model(SURFACES)
    feats = random_features(Rng(2), len(SURFACES), 6)
    ex = model.encode(SURFACES, feats, ["O", "O", "O", "O", "B-Doctor", "O", "B-Date", "O", "O"])
    emb = model.emb
    blocks = {"char_table": emb.char_table, "char_fwd": emb.char_fwd.W, "char_bwd": emb.char_bwd.U,
              "token_table": emb.token_table, "feat_W": emb.feat_W[0]}
    before = {k: p.value.copy() for k, p in blocks.items()}
    with Tape() as tape:
        grads = tape.backward(model.loss(ex))
    sgd_step(model.parameters(), grads, SgdConfig(learning_rate=0.1))
    for k, p in blocks.items():
        assert not np.array_equal(before[k], p.value), k


def test_empty_inputs_rejected():
    model = tiny_model(SURFACES)
    with pytest.raises(EmbeddingError):
        encode_tokens([], None, model.chars, model.tokens)
    with pytest.raises(EmbeddingError):
        encode_tokens(["a", ""], np.zeros((2, 6)), model.chars, model.tokens)
