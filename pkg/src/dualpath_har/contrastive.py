"""Cross-branch alignment losses.

Per stage, projected features from the two paths form a cosine
similarity matrix; the bidirectional loss pulls each sample's own pair
(the diagonal) above all cross-sample pairs, row-wise and column-wise,
with temperature-scaled log-sum-exp terms. Positives are defined purely
by batch index. The final pooled features are additionally aligned
with an MSE loss on L2-normalized vectors.
"""

from dataclasses import dataclass

from .autodiff import (
    Tensor,
    add,
    diagonal,
    l2_normalize,
    logsumexp,
    matmul,
    mean,
    mse,
    scale,
    sub,
    transpose,
)
from .errors import ContractError, ShapeError


@dataclass
class SimilarityMatrix:
    values: Tensor  # [N,N]; entry (i,j) = cosine(z_a[i], z_b[j]); not symmetric
    stage: int = 0


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.5
    stage_count: int = 4
    align_weight: float = 0.7

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractError(f"temperature must be > 0, got {self.temperature}")
        if self.stage_count < 1:
            raise ContractError(f"stage_count must be >= 1, got {self.stage_count}")
        if self.align_weight < 0:
            raise ContractError(f"align_weight must be >= 0, got {self.align_weight}")


def cosine_similarity_matrix(z_a, z_b, stage=0):
    """Pairwise cosine similarities between rows of z_a and rows of z_b."""
    if z_a.data.ndim != 2 or z_b.data.ndim != 2:
        raise ShapeError(
            f"cosine_similarity_matrix: expected [N,d] inputs, got {z_a.data.shape} and {z_b.data.shape}"
        )
    if z_a.data.shape != z_b.data.shape:
        raise ShapeError(
            f"cosine_similarity_matrix: shapes {z_a.data.shape} and {z_b.data.shape} differ"
        )
    values = matmul(l2_normalize(z_a), transpose(l2_normalize(z_b), (1, 0)))
    return SimilarityMatrix(values, stage)


def stage_contrastive_loss(sim, temperature):
    """Bidirectional contrastive loss over one stage's similarity matrix.

    Averages, over the batch, the row-wise and column-wise terms
    log-sum-exp(S/t) - S_ii/t; always >= 0, exactly 0 for N == 1.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be > 0, got {temperature}")
    values = sim.values if isinstance(sim, SimilarityMatrix) else sim
    scaled = scale(values, 1.0 / temperature)
    pos = diagonal(scaled)
    row_term = mean(sub(logsumexp(scaled, 1), pos))
    col_term = mean(sub(logsumexp(scaled, 0), pos))
    return scale(add(row_term, col_term), 0.5)


def multi_stage_loss(stage_losses):
    """Arithmetic mean of the per-stage losses."""
    losses = list(stage_losses)
    if not losses:
        raise ContractError("multi_stage_loss: need at least one stage loss")
    total = losses[0]
    for term in losses[1:]:
        total = add(total, term)
    return scale(total, 1.0 / len(losses))


def alignment_loss(h_res, h_dense):
    """MSE between the L2-normalized pooled features of the two paths."""
    if h_res.data.ndim != 2 or h_dense.data.ndim != 2:
        raise ShapeError(
            f"alignment_loss: expected [N,d] inputs, got {h_res.data.shape} and {h_dense.data.shape}"
        )
    if h_res.data.shape[1] != h_dense.data.shape[1]:
        raise ShapeError(
            f"alignment_loss: feature dims differ ({h_res.data.shape[1]} vs "
            f"{h_dense.data.shape[1]}); configure matching final stage widths "
            "or rely on the network's alignment adapter"
        )
    return mse(l2_normalize(h_res), l2_normalize(h_dense))
