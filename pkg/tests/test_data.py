import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cape import data
from cape.data import (CompositionTable, Dataset, EmbeddingMatrix, TrainingView, Vocabulary,
                       build_composition_embeddings, parse_embedding_file)
from cape.errors import (DataError, MissingToken, ParseError, RaggedVectors,
                         UnknownComposition, UnseenAccessError)
from cape.synthetic import SyntheticSpec, generate_synthetic


def write(tmp_path, text, name="emb.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# -- embedding files ------------------------------------------------------------------

def test_parse_reads_only_wanted(tmp_path):
    got = parse_embedding_file(write(tmp_path, "a 1.0 2.0\nb 3.0 4.0\n"), ["a"])
    assert list(got) == ["a"]
    assert np.array_equal(got["a"], [1.0, 2.0])


def test_parse_missing_token_lists_every_name(tmp_path):
    with pytest.raises(MissingToken) as info:
        parse_embedding_file(write(tmp_path, "a 1.0 2.0\nb 3.0 4.0\n"), ["c", "a", "d"])
    assert "c" in str(info.value) and "d" in str(info.value)


def test_header_and_headerless_parse_identically(tmp_path):
    plain = parse_embedding_file(write(tmp_path, "a 1 2\nb 3 4\n", "p.txt"), ["a", "b"])
    headed = parse_embedding_file(write(tmp_path, "2 2\na 1 2\nb 3 4\n", "h.txt"), ["a", "b"])
    assert plain.keys() == headed.keys()
    for k in plain:
        assert np.array_equal(plain[k], headed[k])


def test_ragged_vectors(tmp_path):
    with pytest.raises(RaggedVectors):
        parse_embedding_file(write(tmp_path, "a 1 2\nb 3 4 5\n"), ["a", "b"])


def test_bad_component_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        parse_embedding_file(write(tmp_path, "a 1 2\nb 3 x\n"), ["a", "b"])
    assert info.value.line == 2


def test_duplicate_token_is_an_error(tmp_path):
    with pytest.raises(ParseError):
        parse_embedding_file(write(tmp_path, "a 1 2\na 3 4\n"), ["a"])


def test_multiword_names_use_joiner_and_aliases(tmp_path):
    p = write(tmp_path, "old_car 1 2\nold-car 3 4\nauto 5 6\n")
    assert np.array_equal(parse_embedding_file(p, ["old car"])["old car"], [1, 2])
    assert np.array_equal(parse_embedding_file(p, ["old car"], joiner="-")["old car"], [3, 4])
    got = parse_embedding_file(p, ["old car"], aliases={"old car": "auto"})
    assert np.array_equal(got["old car"], [5, 6])


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_parse_is_order_independent(tmp_path_factory, rnd):
    rows = [f"t{i} " + " ".join(str(i * 3 + j) for j in range(3)) for i in range(8)]
    base = tmp_path_factory.mktemp("emb")
    wanted = [f"t{i}" for i in range(0, 8, 2)]
    ref = parse_embedding_file(write(base, "\n".join(rows) + "\n", "a.txt"), wanted)
    shuffled = rows[:]
    rnd.shuffle(shuffled)
    got = parse_embedding_file(write(base, "\n".join(shuffled) + "\n", "b.txt"), wanted)
    assert all(np.array_equal(ref[k], got[k]) for k in wanted)


def test_load_embeddings_concatenates_in_order(tmp_path, tiny_vocab):
    names = list(tiny_vocab.states) + list(tiny_vocab.objects)
    a = {n.replace(" ", "_"): [float(i), 0.5] for i, n in enumerate(names)}
    b = {n.replace(" ", "_"): [-float(i)] for i, n in enumerate(names)}
    data.write_embedding_file(tmp_path / "a.txt", a)
    data.write_embedding_file(tmp_path / "b.txt", b, header=False)
    emb = data.load_embeddings(tiny_vocab, [tmp_path / "a.txt", tmp_path / "b.txt"])
    assert emb.dim == 3
    assert np.array_equal(emb.object_vecs[2], [4.0, 0.5, -4.0])


# -- composition embeddings -------------------------------------------------------------

def test_concat_and_mean_definitions():
    vocab = Vocabulary(["s"], ["o"])
    table = CompositionTable(vocab, [(0, 0)], ["seen"])
    emb = EmbeddingMatrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))
    assert np.array_equal(build_composition_embeddings(vocab, emb, table).data, [[1, 0, 0, 1]])
    mean = build_composition_embeddings(vocab, emb, table, mode="mean").data
    assert np.array_equal(mean, [[0.5, 0.5]])


@settings(max_examples=25, deadline=None)
@given(st.permutations(range(6)))
def test_permuting_table_permutes_rows(order):
    vocab = Vocabulary(["wet", "dry"], ["dog", "cat", "old car"])
    table = CompositionTable(vocab, [(0, 0), (0, 1), (1, 1), (1, 2), (1, 0), (0, 2)],
                             ["seen"] * 4 + ["unseen_val", "unseen_test"])
    rng = np.random.default_rng(0)
    emb = EmbeddingMatrix(rng.normal(size=(2, 4)), rng.normal(size=(3, 4)))
    a = build_composition_embeddings(vocab, emb, table).data
    b = build_composition_embeddings(vocab, emb, table.permuted(order)).data
    assert np.array_equal(a[list(order)], b)


# -- tables ---------------------------------------------------------------------------------

def test_table_rejects_duplicates_and_bad_ids(tiny_vocab):
    with pytest.raises(DataError):
        CompositionTable(tiny_vocab, [(0, 0), (0, 0)], ["seen", "unseen_val"])
    with pytest.raises(DataError):
        CompositionTable(tiny_vocab, [(5, 0)], ["seen"])
    with pytest.raises(DataError):
        CompositionTable(tiny_vocab, [(0, 0)], ["sometimes"])


def test_table_counts_and_names(tiny_table):
    assert tiny_table.seen_count == 4 and tiny_table.unseen_count == 2
    assert set(tiny_table.ids("seen")).isdisjoint(tiny_table.ids("unseen_val", "unseen_test"))
    assert tiny_table.name(3) == "dry old car"
    assert tiny_table.find("dry old car") == 3
    assert tiny_table.find("dry+old car") == 3
    with pytest.raises(UnknownComposition):
        tiny_table.find("damp dog")


def test_pairs_file_round_trip(tmp_path, tiny_table):
    data.write_vocab(tmp_path / "vocab.tsv", tiny_table.vocab)
    data.write_pairs(tmp_path / "pairs.tsv", tiny_table)
    vocab = data.read_vocab(tmp_path / "vocab.tsv")
    _, back = data.read_pairs(tmp_path / "pairs.tsv", vocab)
    assert back.pairs == tiny_table.pairs and back.splits == tiny_table.splits
    line = (tmp_path / "pairs.tsv").read_text().splitlines()[3]
    assert line == "dry\told car\tseen"


def test_pairs_file_bad_split(tmp_path, tiny_vocab):
    (tmp_path / "p.tsv").write_text("wet\tdog\tseen\nwet\tcat\tmaybe\n")
    with pytest.raises((ParseError, DataError)):
        data.read_pairs(tmp_path / "p.tsv", tiny_vocab)


# -- the training guard -----------------------------------------------------------------

@pytest.fixture(scope="module")
def small():
    return generate_synthetic(SyntheticSpec(n_states=4, n_objects=4, n_seen=10,
                                            samples_per_pair=5, eval_samples_per_pair=3))


def test_training_view_blocks_unseen(small):
    view = TrainingView(small)
    assert view.unseen_accesses == 0
    unseen = small.table.ids("unseen_val")
    with pytest.raises(UnseenAccessError):
        view.compositions(unseen[:1])
    with pytest.raises(UnseenAccessError):
        view.unseen()
    assert view.unseen_accesses == 2


def test_training_view_batch_only_seen(small):
    view = TrainingView(small)
    feats, labels = view.batch(np.arange(view.n_train))
    assert feats.dtype == np.float64 and feats.shape == (view.n_train, small.features.dim)
    assert all(small.table.is_seen(int(c)) for c in labels)
    assert view.unseen_accesses == 0


def test_train_record_of_unseen_pair_rejected(small):
    feats = small.features
    comps = feats.composition_ids.copy()
    comps[0] = small.table.ids("unseen_test")[0]
    bad = type(feats)(feats.ids, feats.features, comps, feats.partitions)
    with pytest.raises(DataError):
        Dataset(small.vocab, small.table, small.embeddings, bad)
