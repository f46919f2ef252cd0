"""Frozen image features and their binary container.

Layout (little-endian)::

    magic   8 bytes  b"CAPEFS01"
    dim     u32
    count   u32
    count x record:
        id_len          u16
        id              id_len bytes, UTF-8
        composition_id  u32
        feature         dim x f32
        partition       u8   (0 train, 1 val, 2 test)
"""
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, DataError, DimMismatch, TruncatedFile

MAGIC = b"CAPEFS01"
PARTITIONS = ("train", "val", "test")
_HEADER = struct.Struct("<8sII")


@dataclass(frozen=True, eq=False)
class FeatureStore:
    ids: tuple
    features: np.ndarray  # (N, dim) float32, stored exactly as on disk
    composition_ids: np.ndarray  # (N,) uint32
    partitions: np.ndarray  # (N,) uint8

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 2:
            raise DimMismatch(f"features must be a matrix, got shape {feats.shape}")
        n = feats.shape[0]
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "composition_ids",
                           np.asarray(self.composition_ids, dtype=np.uint32).reshape(n))
        object.__setattr__(self, "partitions",
                           np.asarray(self.partitions, dtype=np.uint8).reshape(n))
        if len(self.ids) != n:
            raise DataError("ids and features differ in length")
        if np.any(self.partitions > 2):
            raise DataError("partition code outside {0, 1, 2}")

    @property
    def dim(self):
        return self.features.shape[1]

    def __len__(self):
        return len(self.ids)

    def __eq__(self, other):
        if not isinstance(other, FeatureStore):
            return NotImplemented
        return (self.ids == other.ids
                and self.features.shape == other.features.shape
                and self.features.tobytes() == other.features.tobytes()
                and np.array_equal(self.composition_ids, other.composition_ids)
                and np.array_equal(self.partitions, other.partitions))

    def partition(self, name):
        """Record indices belonging to partition ``name``."""
        return np.flatnonzero(self.partitions == PARTITIONS.index(name))

    def validate(self, table):
        if len(self) and int(self.composition_ids.max()) >= len(table):
            raise DataError("feature record references a composition outside the table")
        train = self.composition_ids[self.partition("train")]
        for cid in np.unique(train):
            if not table.is_seen(int(cid)):
                raise DataError(
                    f"train record labelled with unseen composition {table.name(int(cid))!r}")


def encoded_size(store):
    """Exact byte size of ``store`` once written."""
    per_record = 2 + 4 + 4 * store.dim + 1
    return _HEADER.size + sum(len(i.encode("utf-8")) for i in store.ids) + per_record * len(store)


def save_feature_store(path, store):
    feats = store.features.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, store.dim, len(store)))
        for i, rid in enumerate(store.ids):
            raw = rid.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise DataError(f"record id too long ({len(raw)} bytes)")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", int(store.composition_ids[i])))
            fh.write(feats[i].tobytes())
            fh.write(struct.pack("<B", int(store.partitions[i])))


def load_feature_store(path, expected_dim=None):
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 8 or buf[:8] != MAGIC:
        raise BadMagic(f"{path}: not a feature store (bad magic)")
    if len(buf) < _HEADER.size:
        raise TruncatedFile(f"{path}: truncated header")
    _, dim, count = _HEADER.unpack_from(buf, 0)
    if expected_dim is not None and dim != expected_dim:
        raise DimMismatch(f"{path}: feature dim {dim}, expected {expected_dim}")
    pos = _HEADER.size
    ids = []
    feats = np.empty((count, dim), dtype=np.float32)
    comp = np.empty(count, dtype=np.uint32)
    part = np.empty(count, dtype=np.uint8)
    body = 4 + 4 * dim + 1
    for i in range(count):
        if pos + 2 > len(buf):
            raise TruncatedFile(f"{path}: truncated at record {i}")
        (n,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if pos + n + body > len(buf):
            raise TruncatedFile(f"{path}: truncated at record {i}")
        ids.append(buf[pos:pos + n].decode("utf-8"))
        pos += n
        (comp[i],) = struct.unpack_from("<I", buf, pos)
        pos += 4
        feats[i] = np.frombuffer(buf, dtype="<f4", count=dim, offset=pos)
        pos += 4 * dim
        part[i] = buf[pos]
        pos += 1
    if pos != len(buf):
        raise DataError(f"{path}: {len(buf) - pos} trailing bytes after last record")
    return FeatureStore(ids, feats, comp, part)
