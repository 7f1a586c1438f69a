"""Token-level and sample-level contrastive adaptors with InfoNCE losses.

The token adaptor is a per-token bottleneck MLP whose output joins the
transformer residual stream; the sample adaptor projects the mean-pooled
token matrix to one embedding per image and exists only as a training-time
loss branch.  Both InfoNCE losses contrast matched pairs (same token index,
or same sample) against the cross-view mismatched pairs, with cosine
similarity at temperature ``temperature``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import (
    Tensor,
    add_const,
    diag_part,
    gelu,
    logsumexp_rows,
    matmul,
    mean_all,
    mean_axis0,
    normalize_rows,
    reshape,
    sub,
    transpose_last,
)


@dataclass
class TokenAdaptorWeights:
    """Bottleneck MLP applied per token: up(gelu(down(x)))."""

    w_down: Tensor  # [d, d/r]
    b_down: Tensor  # [d/r]
    w_up: Tensor    # [d/r, d]
    b_up: Tensor    # [d]


@dataclass
class SampleAdaptorWeights:
    """Projection + bottleneck MLP applied to the pooled token matrix."""

    w_p: Tensor     # [d, d]
    b_p: Tensor     # [d]
    w_down: Tensor  # [d, d/r]
    b_down: Tensor  # [d/r]
    w_up: Tensor    # [d/r, d]
    b_up: Tensor    # [d]


@dataclass(frozen=True)
class ContrastConfig:
    """InfoNCE settings: temperature and an optional cap on negatives."""

    temperature: float = 0.1
    token_pair_limit: Optional[int] = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.token_pair_limit is not None and self.token_pair_limit < 1:
            raise ConfigError("token_pair_limit must be a positive count or None")


# Tunable-weight init scale.  Adam moves each coordinate by roughly the
# learning rate per step regardless of gradient magnitude, so over a short
# cosine schedule the reachable ball around the init is small; starting the
# down-projection (and the sample branch) at O(1) scale puts the adaptor in
# a responsive regime from the first step instead of spending most of the
# schedule escaping a near-zero plateau.  The residual path still starts at
# exactly zero because w_up of the token adaptor is zero-initialised.
ADAPTOR_INIT_STD = 4.0


def _check_bottleneck(d: int, r: int) -> int:
    if d % r != 0:
        raise ConfigError(f"bottleneck factor {r} must divide width {d}")
    return d // r


def init_token_adaptor(d: int, r: int, rng: np.random.Generator,
                       init_std: float = ADAPTOR_INIT_STD) -> TokenAdaptorWeights:
    """Seeded-random down-projection, zero up-projection and biases.

    Zero w_up guarantees the adapted forward starts exactly at the frozen
    backbone.
    """
    dr = _check_bottleneck(d, r)
    return TokenAdaptorWeights(
        w_down=Tensor(rng.normal(0.0, init_std, (d, dr)), requires_grad=True),
        b_down=Tensor(np.zeros(dr), requires_grad=True),
        w_up=Tensor(np.zeros((dr, d)), requires_grad=True),
        b_up=Tensor(np.zeros(d), requires_grad=True),
    )


def init_sample_adaptor(d: int, r: int, rng: np.random.Generator,
                        init_std: float = ADAPTOR_INIT_STD) -> SampleAdaptorWeights:
    """Seeded-random init throughout.

    Unlike the token adaptor, w_up here is random rather than zero: the
    sample embedding never enters the residual stream, so zero-init buys no
    equivalence property and would make the embedding zero-norm (its cosine,
    and therefore the sample-level loss, would be undefined at step 0).
    """
    dr = _check_bottleneck(d, r)
    return SampleAdaptorWeights(
        w_p=Tensor(rng.normal(0.0, init_std, (d, d)), requires_grad=True),
        b_p=Tensor(np.zeros(d), requires_grad=True),
        w_down=Tensor(rng.normal(0.0, init_std, (d, dr)), requires_grad=True),
        b_down=Tensor(np.zeros(dr), requires_grad=True),
        w_up=Tensor(rng.normal(0.0, init_std, (dr, d)), requires_grad=True),
        b_up=Tensor(np.zeros(d), requires_grad=True),
    )


def token_adaptor_is_zero(w: TokenAdaptorWeights) -> bool:
    """True while the adaptor output is exactly zero for every input."""
    return not (np.any(w.w_up.data) or np.any(w.b_up.data))


def tc_forward(x: Tensor, w: TokenAdaptorWeights) -> Tensor:
    """Per-token bottleneck MLP: [K, d] -> [K, d]."""
    if x.ndim != 2 or x.shape[1] != w.w_down.shape[0]:
        raise ShapeError(f"tc_forward width mismatch: x {x.shape} vs {w.w_down.shape}")
    h = gelu(matmul(x, w.w_down) + w.b_down)
    return matmul(h, w.w_up) + w.b_up


def sc_forward(x: Tensor, w: SampleAdaptorWeights) -> Tensor:
    """Mean-pool tokens, project, bottleneck MLP: [K, d] -> [d]."""
    if x.ndim != 2 or x.shape[1] != w.w_p.shape[0]:
        raise ShapeError(f"sc_forward width mismatch: x {x.shape} vs {w.w_p.shape}")
    d = x.shape[1]
    pooled = reshape(mean_axis0(x), (1, d))
    h = matmul(pooled, w.w_p) + w.b_p
    out = matmul(gelu(matmul(h, w.w_down) + w.b_down), w.w_up) + w.b_up
    return reshape(out, (d,))


def _infonce_from_pairs(x: Tensor, y: Tensor, cfg: ContrastConfig,
                        rng: Optional[np.random.Generator]) -> Tensor:
    """Mean over anchors j of logsumexp_j'(sim[j, j']/t) - sim[j, j]/t.

    Row j of the similarity matrix holds the positive at the diagonal and
    the cross-view negatives off it, so the expression equals
    -log(exp(s+/t) / sum_j' exp(s_jj'/t)).
    """
    n = x.shape[0]
    sim = matmul(normalize_rows(x), transpose_last(normalize_rows(y)))
    scaled = sim * (1.0 / cfg.temperature)
    limit = cfg.token_pair_limit
    if limit is not None and n - 1 > limit:
        if rng is None:
            raise ContractError(
                "token_pair_limit subsampling requires an rng (session seed)"
            )
        mask = np.full((n, n), -np.inf, dtype=scaled.data.dtype)
        np.fill_diagonal(mask, 0.0)
        for j in range(n):
            others = np.delete(np.arange(n), j)
            keep = rng.choice(others, size=limit, replace=False)
            mask[j, keep] = 0.0
        denom = logsumexp_rows(add_const(scaled, mask))
    else:
        denom = logsumexp_rows(scaled)
    return mean_all(sub(denom, diag_part(scaled)))


def token_contrastive_loss(x: Tensor, y: Tensor, cfg: ContrastConfig,
                           rng: Optional[np.random.Generator] = None) -> Tensor:
    """Token-level InfoNCE over K anchor tokens; exactly 0 at K=1."""
    if x.ndim != 2 or x.shape != y.shape:
        raise ShapeError(f"token loss needs equal [K, d] inputs, got {x.shape}/{y.shape}")
    if x.shape[0] < 1:
        raise ContractError("token loss needs at least one token")
    return _infonce_from_pairs(x, y, cfg, rng)


def sample_contrastive_loss(
    eps: Union[Tensor, Sequence[Tensor]],
    eps_aug: Union[Tensor, Sequence[Tensor]],
    cfg: ContrastConfig,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Sample-level InfoNCE over B embeddings; exactly 0 at B=1.

    Accepts either [B, d] tensors or sequences of [d] embeddings; each
    embedding's positive is its own augmented view, the other augmented
    views are its negatives.
    """
    from .tensor import stack_rows

    if not isinstance(eps, Tensor):
        eps = stack_rows(list(eps))
    if not isinstance(eps_aug, Tensor):
        eps_aug = stack_rows(list(eps_aug))
    if eps.ndim != 2 or eps.shape != eps_aug.shape:
        raise ContractError(
            f"sample loss needs matching [B, d] batches, got {eps.shape}/{eps_aug.shape}"
        )
    return _infonce_from_pairs(eps, eps_aug, cfg, rng)
