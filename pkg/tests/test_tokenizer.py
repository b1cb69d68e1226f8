import string

from hypothesis import given, settings
from hypothesis import strategies as st

from patentfig.tokenizer import BPETokenizer, load_tokenizer


def test_default_vocab_loads_with_stable_id(tok):
    assert tok.tokenizer_id.startswith("bpe-")
    assert tok.vocab_size == 256 + len(tok.merges)
    assert load_tokenizer().tokenizer_id == tok.tokenizer_id


def test_merges_shrink_common_text(tok):
    text = "FIG. 1 is a block diagram of the system."
    assert tok.count(text) < len(text.encode())


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=string.printable))
def test_round_trip_printable_ascii(text):
    tok = load_tokenizer()
    assert tok.decode(tok.encode(text)) == text


@given(st.text())
@settings(max_examples=100, deadline=None)
def test_round_trip_unicode(text):
    tok = load_tokenizer()
    assert tok.decode(tok.encode(text)) == text


def test_train_is_deterministic_and_serializable(tmp_path):
    texts = ["low lower lowest", "new newer newest", "low new"] * 3
    a = BPETokenizer.train(texts, 20)
    b = BPETokenizer.train(list(reversed(texts)), 20)
    assert a.merges == b.merges
    path = tmp_path / "m.txt"
    a.save(path)
    c = BPETokenizer.from_file(path)
    assert c.merges == a.merges and c.tokenizer_id == a.tokenizer_id
    assert c.encode("lowest newer") == a.encode("lowest newer")
