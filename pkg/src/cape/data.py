"""States, objects, compositions and their word embeddings."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (DataError, MissingToken, ParseError, RaggedVectors,
                     UnknownComposition, UnseenAccessError)
from .tensor import Tensor

SPLITS = ("seen", "unseen_val", "unseen_test")


@dataclass(frozen=True)
class Vocabulary:
    states: tuple
    objects: tuple
    state_index: dict = field(init=False, repr=False, compare=False)
    object_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "objects", tuple(self.objects))
        for kind, names in (("state", self.states), ("object", self.objects)):
            if len(set(names)) != len(names):
                raise DataError(f"duplicate {kind} names in vocabulary")
        object.__setattr__(self, "state_index", {n: i for i, n in enumerate(self.states)})
        object.__setattr__(self, "object_index", {n: i for i, n in enumerate(self.objects)})

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_objects(self):
        return len(self.objects)


@dataclass(frozen=True)
class CompositionTable:
    """Ordered (state, object) pairs, each tagged with its split."""

    vocab: Vocabulary
    pairs: tuple
    splits: tuple

    def __post_init__(self):
        pairs = tuple((int(s), int(o)) for s, o in self.pairs)
        splits = tuple(self.splits)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "splits", splits)
        if len(pairs) != len(splits):
            raise DataError("pairs and splits differ in length")
        if len(set(pairs)) != len(pairs):
            raise DataError("duplicate composition in table")
        bad = [t for t in splits if t not in SPLITS]
        if bad:
            raise DataError(f"unknown split tag {bad[0]!r}")
        for s, o in pairs:
            if not (0 <= s < self.vocab.n_states and 0 <= o < self.vocab.n_objects):
                raise DataError(f"pair ({s}, {o}) outside the vocabulary")
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(pairs)})

    def __len__(self):
        return len(self.pairs)

    def ids(self, *splits):
        """Composition ids carrying any of the given split tags, in table order."""
        return np.array([i for i, t in enumerate(self.splits) if t in splits], dtype=np.intp)

    @property
    def seen_ids(self):
        return self.ids("seen")

    @property
    def seen_count(self):
        return self.splits.count("seen")

    @property
    def unseen_count(self):
        return len(self.splits) - self.seen_count

    def is_seen(self, cid):
        return self.splits[cid] == "seen"

    def state_name(self, cid):
        return self.vocab.states[self.pairs[cid][0]]

    def object_name(self, cid):
        return self.vocab.objects[self.pairs[cid][1]]

    def name(self, cid):
        """Display name, ``"state object"``."""
        return f"{self.state_name(cid)} {self.object_name(cid)}"

    def column_name(self, cid):
        """CSV header name, ``"state+object"``."""
        return f"{self.state_name(cid)}+{self.object_name(cid)}"

    def lookup(self, state, obj):
        try:
            key = (self.vocab.state_index[state], self.vocab.object_index[obj])
            return self._index[key]
        except KeyError:
            raise UnknownComposition(f"no composition ({state!r}, {obj!r})") from None

    def find(self, text):
        """Resolve ``"state object"`` or ``"state+object"`` to a composition id."""
        text = text.strip()
        for sep in ("+", "\t"):
            if sep in text:
                s, o = text.split(sep, 1)
                return self.lookup(s.strip(), o.strip())
        # names may themselves contain spaces; try every split point
        words = text.split(" ")
        for k in range(1, len(words)):
            s, o = " ".join(words[:k]), " ".join(words[k:])
            if s in self.vocab.state_index and o in self.vocab.object_index:
                try:
                    return self.lookup(s, o)
                except UnknownComposition:
                    continue
        raise UnknownComposition(f"no composition named {text!r}")

    def permuted(self, order):
        order = list(order)
        return CompositionTable(
            self.vocab, [self.pairs[i] for i in order], [self.splits[i] for i in order])


def read_pairs(path, vocab=None):
    """Read a ``state<TAB>object<TAB>split`` file.

    Without ``vocab`` the vocabulary is built from the file in order of first
    appearance. Returns ``(vocab, table)``.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected state<TAB>object<TAB>split", lineno)
            if parts[2] not in SPLITS:
                raise ParseError(f"unknown split {parts[2]!r}", lineno)
            rows.append(tuple(parts))
    if vocab is None:
        states = list(dict.fromkeys(r[0] for r in rows))
        objects = list(dict.fromkeys(r[1] for r in rows))
        vocab = Vocabulary(states, objects)
    try:
        pairs = [(vocab.state_index[s], vocab.object_index[o]) for s, o, _ in rows]
    except KeyError as exc:
        raise DataError(f"pair file names {exc.args[0]!r}, absent from vocabulary") from None
    return vocab, CompositionTable(vocab, pairs, [r[2] for r in rows])


def write_pairs(path, table):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for cid, split in enumerate(table.splits):
            fh.write(f"{table.state_name(cid)}\t{table.object_name(cid)}\t{split}\n")


def read_vocab(path):
    """Read ``state<TAB>name`` / ``object<TAB>name`` lines."""
    states, objects = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            kind, _, name = line.partition("\t")
            if kind == "state":
                states.append(name)
            elif kind == "object":
                objects.append(name)
            else:
                raise ParseError(f"unknown vocabulary kind {kind!r}", lineno)
    return Vocabulary(states, objects)


def write_vocab(path, vocab):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in vocab.states:
            fh.write(f"state\t{s}\n")
        for o in vocab.objects:
            fh.write(f"object\t{o}\n")


# -- word embeddings ---------------------------------------------------------

def read_aliases(path):
    """``name<TAB>token`` overrides for primitives whose token is not the joined name."""
    aliases = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            name, sep, token = line.partition("\t")
            if not sep:
                raise ParseError("expected name<TAB>token", lineno)
            aliases[name] = token
    return aliases


def _is_header(fields):
    return len(fields) == 2 and all(f.isdigit() for f in fields)


def parse_embedding_file(path, wanted, joiner="_", aliases=None):
    """Read vectors for ``wanted`` primitive names from a text word-vector file.

    Each line is a token followed by its float components; an optional first
    line ``"<count> <dim>"`` is skipped. A name is looked up as
    ``aliases[name]`` if given, else with spaces replaced by ``joiner``.
    Returns ``{name: float64 vector}``.
    """
    aliases = aliases or {}
    token_of = {name: aliases.get(name, name.replace(" ", joiner)) for name in wanted}
    by_token = {}
    for name, tok in token_of.items():
        by_token.setdefault(tok, []).append(name)

    found = {}
    found_line = {}
    header_dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.rstrip("\n").split()
            if not fields:
                continue
            if lineno == 1 and _is_header(fields):
                header_dim = int(fields[1])
                continue
            tok = fields[0]
            if tok not in by_token:
                continue
            if tok in found:
                raise ParseError(
                    f"token {tok!r} repeated (first on line {found_line[tok]})", lineno)
            try:
                vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"bad component for {tok!r}: {exc}", lineno) from None
            if vec.size == 0:
                raise ParseError(f"token {tok!r} has no components", lineno)
            if not np.all(np.isfinite(vec)):
                raise ParseError(f"non-finite component for {tok!r}", lineno)
            found[tok] = vec
            found_line[tok] = lineno

    missing = [name for name in wanted if token_of[name] not in found]
    if missing:
        raise MissingToken(missing)
    dims = {v.size for v in found.values()}
    if header_dim is not None:
        dims.add(header_dim)
    if len(dims) > 1:
        raise RaggedVectors(f"vector dimensions disagree: {sorted(dims)}")
    return {name: found[token_of[name]] for name in wanted}


def write_embedding_file(path, vectors, header=True):
    """Write ``{token: vector}`` in the text layout read by :func:`parse_embedding_file`."""
    vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
    dim = len(next(iter(vectors.values()))) if vectors else 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            fh.write(f"{len(vectors)} {dim}\n")
        for tok, vec in vectors.items():
            fh.write(tok + " " + " ".join(repr(float(x)) for x in vec) + "\n")


@dataclass(frozen=True)
class EmbeddingMatrix:
    state_vecs: np.ndarray
    object_vecs: np.ndarray
    source: str = "single"

    def __post_init__(self):
        if self.state_vecs.shape[1:] != self.object_vecs.shape[1:]:
            raise RaggedVectors("state and object vectors differ in dimension")
        if not (np.all(np.isfinite(self.state_vecs)) and np.all(np.isfinite(self.object_vecs))):
            raise DataError("non-finite word embedding")

    @property
    def dim(self):
        return self.state_vecs.shape[1]


def load_embeddings(vocab, paths, joiner="_", aliases=None):
    """Embeddings for every primitive, concatenated across files in the order given."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    names = list(dict.fromkeys(list(vocab.states) + list(vocab.objects)))
    parts = [parse_embedding_file(p, names, joiner=joiner, aliases=aliases) for p in paths]
    joined = {n: np.concatenate([part[n] for part in parts]) for n in names}
    return EmbeddingMatrix(
        np.stack([joined[s] for s in vocab.states]),
        np.stack([joined[o] for o in vocab.objects]),
        source="single" if len(parts) == 1 else f"concat:{len(parts)}",
    )


def composition_matrix(emb, table, ids=None, mode="concat"):
    """Rows of composition embeddings (numpy) for ``ids`` (default: all, table order)."""
    ids = np.arange(len(table)) if ids is None else np.asarray(ids, dtype=np.intp)
    s = np.array([table.pairs[i][0] for i in ids], dtype=np.intp)
    o = np.array([table.pairs[i][1] for i in ids], dtype=np.intp)
    sv = emb.state_vecs[s].reshape(len(ids), emb.dim)
    ov = emb.object_vecs[o].reshape(len(ids), emb.dim)
    if mode == "concat":
        return np.concatenate([sv, ov], axis=1)
    if mode == "mean":
        return 0.5 * (sv + ov)
    raise ValueError(f"unknown composition mode {mode!r}")


def build_composition_embeddings(vocab, emb, table, mode="concat"):
    """Composition embeddings for the whole table as a constant tensor."""
    if emb.state_vecs.shape[0] != vocab.n_states or emb.object_vecs.shape[0] != vocab.n_objects:
        raise DataError("embedding matrix does not cover the vocabulary")
    return Tensor(composition_matrix(emb, table, mode=mode))


# -- splits and the training guard ---------------------------------------------

@dataclass(frozen=True)
class Dataset:
    vocab: Vocabulary
    table: CompositionTable
    embeddings: EmbeddingMatrix
    features: "FeatureStore"  # noqa: F821

    def __post_init__(self):
        self.features.validate(self.table)

    def __iter__(self):
        return iter((self.vocab, self.table, self.embeddings, self.features))

    def partition(self, name):
        return self.features.partition(name)


class TrainingView:
    """Seen-only window onto a dataset, used by the optimisation loop.

    Any request touching an unseen composition increments
    ``unseen_accesses`` and raises :class:`UnseenAccessError`.
    """

    def __init__(self, dataset):
        self._dataset = dataset
        self.unseen_accesses = 0
        table = dataset.table
        self.seen_ids = table.seen_ids
        idx = dataset.features.partition("train")
        labels = dataset.features.composition_ids[idx]
        for cid in np.unique(labels):
            self._check(int(cid))
        self._train_idx = idx

    def _check(self, cid):
        if not self._dataset.table.is_seen(cid):
            self.unseen_accesses += 1
            raise UnseenAccessError(
                f"training touched unseen composition {self._dataset.table.name(cid)!r}")

    @property
    def vocab(self):
        return self._dataset.vocab

    @property
    def embeddings(self):
        return self._dataset.embeddings

    @property
    def n_train(self):
        return len(self._train_idx)

    def compositions(self, ids):
        """Validated composition ids (all must be seen)."""
        ids = np.asarray(ids, dtype=np.intp)
        for cid in ids:
            self._check(int(cid))
        return ids

    def batch(self, positions):
        """Features (float64) and labels of the given positions in the train partition."""
        rows = self._train_idx[positions]
        feats = self._dataset.features.features[rows].astype(np.float64)
        labels = self._dataset.features.composition_ids[rows].astype(np.intp)
        return feats, labels

    def unseen(self, split="unseen_val"):
        self.unseen_accesses += 1
        raise UnseenAccessError(f"{split} compositions are not available during training")
