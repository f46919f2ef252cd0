"""Attention propagation between composition embeddings.

The propagator normalises the composition embeddings, runs one multi-head
self-attention block over them, adds the attended values back onto the raw
embeddings and maps the result through a three-layer MLP into the image
feature space::

    z   = LayerNorm(Y)
    Q, K, V = z W_Q + b_Q, z W_K + b_K, z W_V + b_V
    P_h = softmax(Q_h K_h^T / sqrt(d_h))          per head h
    Y_A = Y + concat_h(P_h V_h)
    Y_F = phi(Y_A)

``phi`` is ``[affine, LayerNorm, ReLU, Dropout] x 2`` followed by an affine
map to the image feature width and a final ReLU.

Besides the main propagator this module holds the ablation variants: self
attention over primitives and compositions jointly, cross attention between
states and objects feeding the propagator, and a parameter-matched MLP with
no cross-row mixing.
"""
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .data import composition_matrix
from .errors import ConfigError, HeadDivisibility, ShapeMismatch
from .tensor import Tensor

VARIANTS = ("cape", "cape_self", "cape_dual", "mlp")


@dataclass(frozen=True)
class PropagatorConfig:
    embed_dim: int
    out_dim: int
    n_heads: int = 6
    hidden_dim: int = 4096
    dropout_p: float = 0.5
    scale_attention: bool = True
    use_output_projection: bool = False
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim < 1 or self.out_dim < 1 or self.hidden_dim < 1:
            raise ConfigError("propagator dimensions must be positive")
        if self.n_heads < 1 or self.embed_dim % self.n_heads:
            raise HeadDivisibility(
                f"embedding width {self.embed_dim} is not divisible by {self.n_heads} heads")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")

    @property
    def head_dim(self):
        return self.embed_dim // self.n_heads


@dataclass
class PropagatorOutput:
    Y_F: Tensor
    Y_A: Tensor | None = None
    P: np.ndarray | None = None  # (heads, n, n) after softmax
    A_pre: np.ndarray | None = None  # (heads, n, n) before softmax
    row_offset: int = 0  # attention rows preceding the composition rows


# -- parameters ----------------------------------------------------------------

def _affine(params, rng, name, fan_in, fan_out):
    bound = 1.0 / math.sqrt(fan_in)
    params[f"{name}.weight"] = Tensor(
        rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True,
        name=f"{name}.weight")
    params[f"{name}.bias"] = Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.bias")


def _norm(params, name, dim):
    params[f"{name}.gamma"] = Tensor(np.ones(dim), requires_grad=True, name=f"{name}.gamma")
    params[f"{name}.beta"] = Tensor(np.zeros(dim), requires_grad=True, name=f"{name}.beta")


def init_attention_params(params, rng, prefix, dim, output_projection=False):
    for proj in ("q", "k", "v"):
        _affine(params, rng, f"{prefix}{proj}", dim, dim)
    if output_projection:
        _affine(params, rng, f"{prefix}o", dim, dim)
    return params


def init_phi_params(params, rng, prefix, in_dim, hidden_dim, out_dim):
    _affine(params, rng, f"{prefix}mlp.0", in_dim, hidden_dim)
    _norm(params, f"{prefix}mlp.ln0", hidden_dim)
    _affine(params, rng, f"{prefix}mlp.1", hidden_dim, in_dim)
    _norm(params, f"{prefix}mlp.ln1", in_dim)
    _affine(params, rng, f"{prefix}mlp.2", in_dim, out_dim)
    return params


def init_propagator_params(cfg, rng, prefix=""):
    """Affine weights ~ U(+-1/sqrt(fan_in)), biases 0, LayerNorm gamma 1 / beta 0."""
    params = {}
    _norm(params, f"{prefix}ln1", cfg.embed_dim)
    init_attention_params(params, rng, prefix, cfg.embed_dim, cfg.use_output_projection)
    init_phi_params(params, rng, prefix, cfg.embed_dim, cfg.hidden_dim, cfg.out_dim)
    return params


def count_params(params):
    return int(sum(p.data.size for p in params.values()))


def propagator_param_count(embed_dim, out_dim, hidden_dim=4096, output_projection=False):
    E, D, H = embed_dim, out_dim, hidden_dim
    attn = 2 * E + (4 if output_projection else 3) * (E * E + E)
    return attn + phi_param_count(E, H, D)


def phi_param_count(in_dim, hidden_dim, out_dim):
    E, H, D = in_dim, hidden_dim, out_dim
    return (E * H + H) + 2 * H + (H * E + E) + 2 * E + (E * D + D)


def parity_hidden_dim(embed_dim, out_dim, hidden_dim=4096, output_projection=False):
    """Hidden width for the row-wise MLP whose size best matches the propagator's."""
    target = propagator_param_count(embed_dim, out_dim, hidden_dim, output_projection)
    per_unit = 2 * embed_dim + 3
    fixed = phi_param_count(embed_dim, 0, out_dim)
    h = (target - fixed) / per_unit
    return max(1, min((math.floor(h), math.ceil(h)),
                      key=lambda c: abs(phi_param_count(embed_dim, c, out_dim) - target)))


# -- building blocks -------------------------------------------------------------

def multi_head_attention(params, prefix, queries, keys_values, n_heads, scale=True,
                         output_projection=False):
    """Head-split attention; returns the concatenated head outputs and both score stacks.

    Heads share one projection per role and take consecutive column slices of
    width ``dim / n_heads``.
    """
    dim = queries.shape[1]
    if keys_values.shape[1] != dim:
        raise ShapeMismatch(f"query width {dim} != key width {keys_values.shape[1]}")
    if dim % n_heads:
        raise HeadDivisibility(f"width {dim} is not divisible by {n_heads} heads")
    dh = dim // n_heads
    Q = T.linear(queries, params[f"{prefix}q.weight"], params[f"{prefix}q.bias"])
    K = T.linear(keys_values, params[f"{prefix}k.weight"], params[f"{prefix}k.bias"])
    V = T.linear(keys_values, params[f"{prefix}v.weight"], params[f"{prefix}v.bias"])
    factor = 1.0 / math.sqrt(dh) if scale else 1.0
    heads, P, A = [], [], []
    for h in range(n_heads):
        lo, hi = h * dh, (h + 1) * dh
        scores = T.slice_cols(Q, lo, hi) @ T.slice_cols(K, lo, hi).T
        if factor != 1.0:
            scores = scores * factor
        probs = T.softmax_rows(scores)
        heads.append(probs @ T.slice_cols(V, lo, hi))
        A.append(scores.data)
        P.append(probs.data)
    out = heads[0] if n_heads == 1 else T.concat_cols(heads)
    if output_projection:
        out = T.linear(out, params[f"{prefix}o.weight"], params[f"{prefix}o.bias"])
    return out, np.stack(P), np.stack(A)


def phi(params, x, dropout_p, training, rng, prefix="", eps=1e-5):
    h = T.linear(x, params[f"{prefix}mlp.0.weight"], params[f"{prefix}mlp.0.bias"])
    h = T.layer_norm(h, params[f"{prefix}mlp.ln0.gamma"], params[f"{prefix}mlp.ln0.beta"], eps)
    h = T.dropout(T.relu(h), dropout_p, training, rng)
    h = T.linear(h, params[f"{prefix}mlp.1.weight"], params[f"{prefix}mlp.1.bias"])
    h = T.layer_norm(h, params[f"{prefix}mlp.ln1.gamma"], params[f"{prefix}mlp.ln1.beta"], eps)
    h = T.dropout(T.relu(h), dropout_p, training, rng)
    h = T.linear(h, params[f"{prefix}mlp.2.weight"], params[f"{prefix}mlp.2.bias"])
    return T.relu(h)


# -- variants ------------------------------------------------------------------------

def forward_cape(params, Y_hat, cfg, training=False, rng=None, prefix=""):
    Y_hat = T.as_tensor(Y_hat)
    if Y_hat.data.ndim != 2 or Y_hat.shape[1] != cfg.embed_dim:
        raise ShapeMismatch(
            f"composition embeddings must be (n, {cfg.embed_dim}), got {Y_hat.shape}")
    if training and cfg.dropout_p > 0 and rng is None:
        raise ConfigError("training mode with dropout needs an rng")
    z = T.layer_norm(Y_hat, params[f"{prefix}ln1.gamma"], params[f"{prefix}ln1.beta"],
                     cfg.ln_eps)
    Y_P, P, A = multi_head_attention(
        params, prefix, z, z, cfg.n_heads, cfg.scale_attention, cfg.use_output_projection)
    Y_A = Y_hat + Y_P
    Y_F = phi(params, Y_A, cfg.dropout_p, training, rng, prefix, cfg.ln_eps)
    return PropagatorOutput(Y_F=Y_F, Y_A=Y_A, P=P, A_pre=A)


def forward_cape_self(params, rows, n_primitives, cfg, training=False, rng=None):
    """Propagate over ``states || objects || compositions``; keep composition rows.

    ``rows`` stacks the primitive embeddings (first ``n_primitives`` rows)
    above the mean-mode composition embeddings.
    """
    out = forward_cape(params, rows, cfg, training, rng)
    n = rows.shape[0]
    if n_primitives:
        out.Y_F = T.take_rows(out.Y_F, np.arange(n_primitives, n))
        out.Y_A = T.take_rows(out.Y_A, np.arange(n_primitives, n))
    out.row_offset = n_primitives
    return out


def cross_attention_block(params, prefix, queries, keys_values, n_heads, scale=True):
    """Bare head-split cross attention: no normalisation, residual or MLP."""
    out, P, A = multi_head_attention(params, prefix, queries, keys_values, n_heads, scale)
    return out, P, A


def forward_cape_dual(params, state_emb, object_emb, pair_states, pair_objects, cfg,
                      training=False, rng=None):
    """States attend to objects and objects to states; pairs concatenate the results.

    ``params`` holds the two cross-attention blocks under the ``state.`` and
    ``object.`` prefixes and the main propagator under ``main.``. ``cfg``
    describes the main propagator (width ``2 * word_dim``).
    """
    state_emb, object_emb = T.as_tensor(state_emb), T.as_tensor(object_emb)
    ys, _, _ = cross_attention_block(
        params, "state.", state_emb, object_emb, cfg.n_heads, cfg.scale_attention)
    yo, _, _ = cross_attention_block(
        params, "object.", object_emb, state_emb, cfg.n_heads, cfg.scale_attention)
    y_dual = T.concat_cols([T.take_rows(ys, pair_states), T.take_rows(yo, pair_objects)])
    return forward_cape(params, y_dual, cfg, training, rng, prefix="main.")


def forward_mlp_baseline(params, Y_hat, dropout_p=0.5, training=False, rng=None, eps=1e-5):
    return PropagatorOutput(Y_F=phi(params, T.as_tensor(Y_hat), dropout_p, training, rng, eps=eps))


# -- models bound to a composition table ------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    variant: str
    word_dim: int
    out_dim: int
    n_heads: int = 6
    hidden_dim: int = 4096
    dropout_p: float = 0.5
    scale_attention: bool = True
    use_output_projection: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    def to_dict(self):
        return asdict(self)

    @property
    def embed_dim(self):
        """Attention width: concatenated pairs for cape/dual/mlp, one word for cape_self."""
        return self.word_dim if self.variant == "cape_self" else 2 * self.word_dim

    def propagator(self):
        return PropagatorConfig(
            embed_dim=self.embed_dim, out_dim=self.out_dim, n_heads=self.n_heads,
            hidden_dim=self.hidden_dim, dropout_p=self.dropout_p,
            scale_attention=self.scale_attention,
            use_output_projection=self.use_output_projection)

    @property
    def mlp_hidden_dim(self):
        return parity_hidden_dim(self.embed_dim, self.out_dim, self.hidden_dim,
                                 self.use_output_projection)


class CompositionModel:
    """A variant plus the fixed word embeddings it reads composition rows from.

    ``forward(ids)`` returns projected embeddings whose rows follow ``ids``;
    only those compositions take part in attention.
    """

    def __init__(self, config, table, embeddings, rng=None, params=None):
        self.config = config
        self.table = table
        self.embeddings = embeddings
        if embeddings.dim != config.word_dim:
            raise ShapeMismatch(
                f"word embeddings have width {embeddings.dim}, model expects {config.word_dim}")
        self.prop_cfg = config.propagator()
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            params = self._init(rng)
        self.params = params

    def _init(self, rng):
        cfg, pc = self.config, self.prop_cfg
        if cfg.variant in ("cape", "cape_self"):
            return init_propagator_params(pc, rng)
        if cfg.variant == "cape_dual":
            if cfg.word_dim % cfg.n_heads:
                raise HeadDivisibility(
                    f"word width {cfg.word_dim} is not divisible by {cfg.n_heads} heads")
            params = {}
            init_attention_params(params, rng, "state.", cfg.word_dim)
            init_attention_params(params, rng, "object.", cfg.word_dim)
            params.update(init_propagator_params(pc, rng, prefix="main."))
            return params
        return init_phi_params({}, rng, "", pc.embed_dim, cfg.mlp_hidden_dim, cfg.out_dim)

    @property
    def n_params(self):
        return count_params(self.params)

    def forward(self, ids, training=False, rng=None):
        ids = np.asarray(ids, dtype=np.intp)
        cfg, pc, emb = self.config, self.prop_cfg, self.embeddings
        if cfg.variant == "cape":
            y = Tensor(composition_matrix(emb, self.table, ids, "concat"))
            return forward_cape(self.params, y, pc, training, rng)
        if cfg.variant == "cape_self":
            comps = composition_matrix(emb, self.table, ids, "mean")
            rows = np.concatenate([emb.state_vecs, emb.object_vecs, comps], axis=0)
            n_prim = emb.state_vecs.shape[0] + emb.object_vecs.shape[0]
            return forward_cape_self(self.params, Tensor(rows), n_prim, pc, training, rng)
        if cfg.variant == "cape_dual":
            ps = np.array([self.table.pairs[i][0] for i in ids], dtype=np.intp)
            po = np.array([self.table.pairs[i][1] for i in ids], dtype=np.intp)
            return forward_cape_dual(self.params, Tensor(emb.state_vecs), Tensor(emb.object_vecs),
                                     ps, po, pc, training, rng)
        y = Tensor(composition_matrix(emb, self.table, ids, "concat"))
        return forward_mlp_baseline(self.params, y, cfg.dropout_p, training, rng)

    def with_params(self, params):
        return CompositionModel(self.config, self.table, self.embeddings, params=params)


def model_config_from_dict(d):
    fields = {k: d[k] for k in ModelConfig.__dataclass_fields__ if k in d}
    return ModelConfig(**fields)


def with_variant(config, variant):
    return replace(config, variant=variant)
