"""Vector attention on point sets: VCA, VSA and the Point Transformer Block.

Feature matrices are flattened over the batch: a batch of ``B`` shapes with
``n`` points each is a ``(B * n) x d`` tensor, and neighborhoods index rows of
that flattened matrix. Positions stay plain numpy arrays; only relative
positions ``P_q - P_kv`` ever enter the network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..engine import tensor as T
from ..engine.layers import BatchNormState, Linear, MlpParams
from ..errors import ShapeMismatchError
from ..geometry.sampling import as_batch, batched_knn
from ..rng import RngStream


@dataclass
class VcaParams:
    """Weights of one vector cross attention.

    ``delta`` (3 -> d -> d) encodes relative positions and is shared between
    the scores and the values; ``gamma`` (d -> d -> d) maps score inputs to
    per-channel similarities. In feature-free mode ``w_q``/``w_k``/``w_v`` are
    absent and only the position terms remain.
    """

    delta: MlpParams
    gamma: MlpParams
    w_q: Linear | None = None
    w_k: Linear | None = None
    w_v: Linear | None = None
    feature_free: bool = False

    def __post_init__(self) -> None:
        if self.delta.d_in != 3:
            raise ShapeMismatchError(f"delta must take 3 inputs, got {self.delta.d_in}")
        widths = {self.delta.d_out, self.gamma.d_in, self.gamma.d_out}
        for proj in (self.w_q, self.w_k, self.w_v):
            if proj is not None:
                widths.add(proj.d_out)
        if len(widths) != 1:
            raise ShapeMismatchError(f"VCA output widths disagree: {sorted(widths)}")
        if not self.feature_free and None in (self.w_q, self.w_k, self.w_v):
            raise ShapeMismatchError("VCA with features needs w_q, w_k and w_v")

    @classmethod
    def create(
        cls,
        stream: RngStream,
        width: int,
        d_q: int | None = None,
        d_kv: int | None = None,
        feature_free: bool = False,
        dtype="float32",
    ) -> VcaParams:
        d_q = width if d_q is None else d_q
        d_kv = width if d_kv is None else d_kv
        delta = MlpParams.create(stream, (3, width, width), dtype)
        gamma = MlpParams.create(stream, (width, width, width), dtype)
        if feature_free:
            return cls(delta, gamma, feature_free=True)
        return cls(
            delta,
            gamma,
            w_q=Linear.create(stream, d_q, width, dtype, bias=False),
            w_k=Linear.create(stream, d_kv, width, dtype, bias=False),
            w_v=Linear.create(stream, d_kv, width, dtype, bias=False),
        )

    @property
    def width(self) -> int:
        return self.delta.d_out


def vca(
    query_positions: np.ndarray,
    query_features: T.Tensor | None,
    kv_positions: np.ndarray,
    kv_features: T.Tensor | None,
    neighborhood: np.ndarray,
    params: VcaParams,
    global_tokens: T.Tensor | None = None,
) -> T.Tensor:
    """Vector cross attention from queries over their key-value neighborhoods.

    For query ``i`` and neighbor ``j``::

        s_ij = gamma(F_q[i] - F_k[j] + delta(P_q[i] - P_kv[j]))
        V_ij = F_v[j] + delta(P_q[i] - P_kv[j])
        out_i = sum_j softmax_j(s_ij) * V_ij      (per channel)

    Args:
        query_positions: ``M x 3``.
        query_features: ``M x d_q`` (ignored in feature-free mode).
        kv_positions: ``N x 3``.
        kv_features: ``N x d_kv`` (ignored in feature-free mode).
        neighborhood: ``M x k`` row indices into the key-value set.
        params: attention weights.
        global_tokens: optional ``M x d_kv`` extra key-value token per query.
            It has no position, so its score and value carry no delta term.

    Returns:
        ``M x d`` tensor.

    Raises:
        ShapeMismatchError: on out-of-range neighbor indices or width mismatch.
    """
    neighborhood = np.asarray(neighborhood, dtype=np.int64)
    n_queries = len(query_positions)
    if neighborhood.ndim != 2 or len(neighborhood) != n_queries:
        raise ShapeMismatchError(
            f"neighborhood shape {neighborhood.shape} does not match {n_queries} queries"
        )
    if neighborhood.size and (
        neighborhood.min() < 0 or neighborhood.max() >= len(kv_positions)
    ):
        raise ShapeMismatchError(
            f"neighborhood index out of range for {len(kv_positions)} key-values"
        )

    dtype = params.delta.layers[0].weight.dtype
    relative = (query_positions[:, None, :] - kv_positions[neighborhood]).astype(dtype)
    position_terms = params.delta(T.Tensor(relative))

    if params.feature_free:
        score_inputs = position_terms
        values = position_terms
    else:
        if query_features is None or kv_features is None:
            raise ShapeMismatchError("VCA with features was called without features")
        f_q = params.w_q(query_features)
        f_k = params.w_k(kv_features)
        f_v = params.w_v(kv_features)
        width = params.width
        score_inputs = T.add(
            T.sub(T.reshape(f_q, (n_queries, 1, width)), T.take_rows(f_k, neighborhood)),
            position_terms,
        )
        values = T.add(T.take_rows(f_v, neighborhood), position_terms)
        if global_tokens is not None:
            g_score = T.sub(f_q, params.w_k(global_tokens))
            g_value = params.w_v(global_tokens)
            score_inputs = T.concat(
                [score_inputs, T.reshape(g_score, (n_queries, 1, width))], axis=1
            )
            values = T.concat([values, T.reshape(g_value, (n_queries, 1, width))], axis=1)

    weights = T.channel_softmax(params.gamma(score_inputs), axis=1)
    return T.sum(T.mul(weights, values), axis=1)


def vsa(
    positions: np.ndarray,
    features: T.Tensor | None,
    k: int,
    params: VcaParams,
    neighborhood: np.ndarray | None = None,
) -> T.Tensor:
    """Vector self attention: VCA with the point set attending to itself.

    ``positions`` is ``N x 3`` or a ``B x N x 3`` batch; neighborhoods are the
    ``k`` nearest points within each shape, the point itself included.
    """
    batch = as_batch(positions)
    if neighborhood is None:
        neighborhood = batched_knn(batch, batch, k)
    flat = batch.reshape(-1, 3)
    return vca(flat, features, flat, features, neighborhood, params)


@dataclass
class PtbParams:
    """Point Transformer Block: ``BN(X + VSA(X))``."""

    attention: VcaParams
    norm: BatchNormState

    @classmethod
    def create(
        cls, stream: RngStream, width: int, feature_free: bool = False, dtype="float32"
    ) -> PtbParams:
        return cls(
            VcaParams.create(stream, width, feature_free=feature_free, dtype=dtype),
            BatchNormState.create(width, dtype),
        )


def ptb(
    positions: np.ndarray,
    features: T.Tensor | None,
    k: int,
    params: PtbParams,
    training: bool,
    neighborhood: np.ndarray | None = None,
) -> tuple[np.ndarray, T.Tensor]:
    """Run one Point Transformer Block; positions pass through untouched.

    With ``features=None`` (feature-free input) there is nothing to add
    back, so the block reduces to ``BN(VSA)``.
    """
    out = vsa(positions, features, k, params.attention, neighborhood)
    if features is not None:
        out = T.add(features, out)
    return positions, params.norm(out, training)
