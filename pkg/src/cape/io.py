"""Reading and writing whole datasets as a directory of plain files."""
import json
from pathlib import Path

from .data import (Dataset, load_embeddings, read_aliases, read_pairs, read_vocab,
                   write_embedding_file, write_pairs, write_vocab)
from .features import load_feature_store, save_feature_store

VOCAB_FILE = "vocab.tsv"
PAIRS_FILE = "pairs.tsv"
EMBEDDINGS_FILE = "embeddings.txt"
FEATURES_FILE = "features.bin"


def load_dataset(pairs, embeddings, features, vocab=None, joiner="_", aliases=None):
    """Assemble a :class:`Dataset` from its files.

    ``embeddings`` is one path or a list whose vectors are concatenated in
    order. ``aliases`` is an optional ``name<TAB>token`` file.
    """
    vocab_obj = read_vocab(vocab) if vocab else None
    vocab_obj, table = read_pairs(pairs, vocab_obj)
    alias_map = read_aliases(aliases) if aliases else None
    emb = load_embeddings(vocab_obj, embeddings, joiner=joiner, aliases=alias_map)
    return Dataset(vocab_obj, table, emb, load_feature_store(features))


def write_dataset(out_dir, dataset, joiner="_"):
    """Write vocab, pair table, one embedding file and the feature store; return paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / fname for name, fname in (
        ("vocab", VOCAB_FILE), ("pairs", PAIRS_FILE), ("embeddings", EMBEDDINGS_FILE),
        ("features", FEATURES_FILE))}
    write_vocab(paths["vocab"], dataset.vocab)
    write_pairs(paths["pairs"], dataset.table)
    vectors = {}
    for name, vec in zip(dataset.vocab.states, dataset.embeddings.state_vecs):
        vectors[name.replace(" ", joiner)] = vec
    for name, vec in zip(dataset.vocab.objects, dataset.embeddings.object_vecs):
        vectors[name.replace(" ", joiner)] = vec
    write_embedding_file(paths["embeddings"], vectors)
    save_feature_store(paths["features"], dataset.features)
    return paths


def dump_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
