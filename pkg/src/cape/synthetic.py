"""Desk-scale synthetic compositional datasets.

Every state and object owns a random unit latent vector. A primitive's word
embedding is its latent plus small Gaussian noise, and an image of pair
``(s, o)`` has feature ``g(u_s, v_o) + N(0, noise_sigma)`` where ``g`` is a
fixed random bilinear map. Unseen pairs are therefore predictable from the
primitives seen in other pairs.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .data import CompositionTable, Dataset, EmbeddingMatrix, Vocabulary
from .errors import SpecError
from .features import FeatureStore


@dataclass(frozen=True)
class SyntheticSpec:
    n_states: int = 5
    n_objects: int = 5
    n_seen: int = 15
    n_unseen: int | None = None  # None: every remaining pair
    n_unseen_val: int | None = None  # None: half of the unseen pairs
    samples_per_pair: int = 50
    eval_samples_per_pair: int = 20
    noise_sigma: float = 0.05
    embed_noise: float = 0.05
    feature_dim: int = 64
    embedding_dim: int = 12
    seed: int = 0

    def to_dict(self):
        return asdict(self)

    def validate(self):
        total = self.n_states * self.n_objects
        if self.n_states < 1 or self.n_objects < 1:
            raise SpecError("need at least one state and one object")
        if self.feature_dim < 1 or self.embedding_dim < 1:
            raise SpecError("feature_dim and embedding_dim must be positive")
        if self.samples_per_pair < 1 or self.eval_samples_per_pair < 1:
            raise SpecError("samples per pair must be positive")
        if self.noise_sigma < 0 or self.embed_noise < 0:
            raise SpecError("noise levels must be non-negative")
        if self.n_seen < max(self.n_states, self.n_objects):
            raise SpecError(
                f"{self.n_seen} seen pairs cannot cover every state and object")
        n_unseen = total - self.n_seen if self.n_unseen is None else self.n_unseen
        if n_unseen < 1:
            raise SpecError("at least one unseen pair is required")
        if self.n_seen + n_unseen > total:
            raise SpecError(f"{self.n_seen} + {n_unseen} pairs exceed the {total} possible")
        n_val = n_unseen // 2 if self.n_unseen_val is None else self.n_unseen_val
        if not 0 <= n_val <= n_unseen:
            raise SpecError("n_unseen_val outside [0, n_unseen]")
        return n_unseen, n_val


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _choose_pairs(rng, spec, n_unseen):
    S, O = spec.n_states, spec.n_objects
    ps, po = rng.permutation(S), rng.permutation(O)
    # a diagonal sweep over shuffled states/objects touches every primitive once
    cover = [(int(ps[k % S]), int(po[k % O])) for k in range(max(S, O))]
    chosen = set(cover)
    rest = [(s, o) for s in range(S) for o in range(O) if (s, o) not in chosen]
    order = rng.permutation(len(rest))
    rest = [rest[i] for i in order]
    extra = spec.n_seen - len(cover)
    seen = cover + rest[:extra]
    unseen = rest[extra:extra + n_unseen]
    return sorted(seen), unseen


def generate_synthetic(spec):
    """Build a :class:`Dataset` from ``spec``; deterministic in ``spec.seed``."""
    n_unseen, n_val = spec.validate()
    rng = np.random.default_rng(spec.seed)
    seen, unseen = _choose_pairs(rng, spec, n_unseen)
    val_pairs, test_pairs = sorted(unseen[:n_val]), sorted(unseen[n_val:])

    vocab = Vocabulary([f"state{i:02d}" for i in range(spec.n_states)],
                       [f"object{j:02d}" for j in range(spec.n_objects)])
    pairs = seen + val_pairs + test_pairs
    splits = ["seen"] * len(seen) + ["unseen_val"] * len(val_pairs) + ["unseen_test"] * len(test_pairs)
    table = CompositionTable(vocab, pairs, splits)

    L, D = spec.embedding_dim, spec.feature_dim
    u = _unit_rows(rng, spec.n_states, L)
    v = _unit_rows(rng, spec.n_objects, L)
    emb = EmbeddingMatrix(
        u + spec.embed_noise * rng.standard_normal(u.shape),
        v + spec.embed_noise * rng.standard_normal(v.shape),
        source="synthetic",
    )
    bilinear = rng.standard_normal((D, L, L))

    def prototype(cid):
        s, o = table.pairs[cid]
        return np.einsum("i,kij,j->k", u[s], bilinear, v[o])

    seen_ids = list(range(len(seen)))
    val_ids = list(range(len(seen), len(seen) + len(val_pairs)))
    test_ids = list(range(len(seen) + len(val_pairs), len(pairs)))
    plan = [
        ("train", 0, seen_ids, spec.samples_per_pair),
        ("val", 1, seen_ids + val_ids, spec.eval_samples_per_pair),
        ("test", 2, seen_ids + test_ids, spec.eval_samples_per_pair),
    ]
    ids, feats, comps, parts = [], [], [], []
    for pname, code, cids, k in plan:
        for cid in cids:
            base = prototype(cid)
            noise = rng.standard_normal((k, D)) * spec.noise_sigma
            for j in range(k):
                ids.append(f"{pname}/{table.column_name(cid)}/{j:04d}")
                feats.append(base + noise[j])
                comps.append(cid)
                parts.append(code)
    features = FeatureStore(ids, np.array(feats).reshape(-1, D), comps, parts)
    return Dataset(vocab, table, emb, features)
