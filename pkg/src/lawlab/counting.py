"""Parameter and training-FLOP accounting for dense transformer architectures.

Turns an architecture descriptor plus a token budget into the (N, C) pair a
scaling-law fit consumes, under every convention knob that materially changes
fitted laws: embeddings in/out of N, embeddings in/out of C, and detailed
FLOP accounting versus the 6·N·D shortcut.

Counting conventions (audit trail):
  parameters, per layer:
    attention Q,K,V,O       4 * d_model * (n_heads * head_dim)
    feed-forward            k * d_model * ffn_dim      (k = 2, or 3 when gated)
    normalization gains     2 * d_model
  plus a final-norm gain of d_model; biases are omitted. Embedding matrices
  (vocab * d_model in, d_model * vocab out unless tied) enter only when
  included.
  forward FLOPs per token:
    token embedding         2 * vocab * d_model            (when included)
    per layer: QKV          2 * 3 * d_model * (n_heads * head_dim)
               logits       2 * seq_len * (n_heads * head_dim)
               softmax      3 * n_heads * seq_len
               attn @ V     2 * seq_len * (n_heads * head_dim)
               output proj  2 * (n_heads * head_dim) * d_model
               feed-forward 2 * k * d_model * ffn_dim
    output logits           2 * d_model * vocab            (when included)
  Training FLOPs are 3x forward (one forward plus a backward at twice the
  forward cost). Attention uses the full sequence length, no causal halving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import TextIO

from .errors import MissingArch, UnknownArch
from .ledger import Dataset, RunRecord

FFN_KINDS = ("two_matrix", "gated_three_matrix")
FLOP_METHODS = ("detailed", "six_nd")


@dataclass(frozen=True)
class ArchDescriptor:
    """Shape of one dense transformer."""

    n_layers: int
    d_model: int
    n_heads: int
    head_dim: int
    ffn_dim: int
    vocab: int
    seq_len: int
    ffn_kind: str = "two_matrix"
    tied_embeddings: bool = False

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "head_dim", "ffn_dim", "vocab", "seq_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.ffn_kind not in FFN_KINDS:
            raise ValueError(f"unknown ffn_kind: {self.ffn_kind!r}")

    @property
    def ffn_matrices(self) -> int:
        return 2 if self.ffn_kind == "two_matrix" else 3


@dataclass(frozen=True)
class CountingPolicy:
    """Which N and which C a fit reads off each record."""

    embeddings_in_n: bool = True
    embeddings_in_c: bool = True
    flop_method: str = "detailed"

    def __post_init__(self):
        if self.flop_method not in FLOP_METHODS:
            raise ValueError(f"unknown flop_method: {self.flop_method!r}")

    @property
    def n_convention(self) -> str:
        return "total" if self.embeddings_in_n else "nonembed"


def count_params(arch: ArchDescriptor, include_embeddings: bool) -> int:
    """Exact parameter count under the inventory in the module docstring."""
    attn = 4 * arch.d_model * (arch.n_heads * arch.head_dim)
    ffn = arch.ffn_matrices * arch.d_model * arch.ffn_dim
    norms = 2 * arch.d_model
    total = arch.n_layers * (attn + ffn + norms) + arch.d_model
    if include_embeddings:
        total += arch.vocab * arch.d_model
        if not arch.tied_embeddings:
            total += arch.d_model * arch.vocab
    return total


def embedding_params(arch: ArchDescriptor) -> int:
    """Parameters contributed by the embedding matrices alone."""
    out = arch.vocab * arch.d_model
    if not arch.tied_embeddings:
        out += arch.d_model * arch.vocab
    return out


def flops_per_token(arch: ArchDescriptor, include_embeddings: bool) -> float:
    """Forward-pass FLOPs per token under the inventory in the module docstring."""
    kv = arch.n_heads * arch.head_dim
    per_layer = (
        2 * 3 * arch.d_model * kv
        + 2 * arch.seq_len * kv
        + 3 * arch.n_heads * arch.seq_len
        + 2 * arch.seq_len * kv
        + 2 * kv * arch.d_model
        + 2 * arch.ffn_matrices * arch.d_model * arch.ffn_dim
    )
    total = arch.n_layers * per_layer
    if include_embeddings:
        total += 2 * arch.vocab * arch.d_model  # token embedding lookup-as-matmul
        total += 2 * arch.d_model * arch.vocab  # output logits
    return float(total)


def six_nd(n: int, d: int) -> int:
    """The 6·N·D training-compute approximation, exact in integer arithmetic."""
    if n <= 0 or d <= 0:
        raise ValueError("six_nd requires positive N and D")
    return 6 * n * d


def training_flops(arch: ArchDescriptor, d_tokens: int, policy: CountingPolicy) -> float:
    """Training compute C for ``d_tokens`` under the given counting policy."""
    if d_tokens < 1:
        raise ValueError("d_tokens must be >= 1")
    if policy.flop_method == "six_nd":
        return float(six_nd(count_params(arch, policy.embeddings_in_n), d_tokens))
    return 3.0 * flops_per_token(arch, policy.embeddings_in_c) * d_tokens


# ---------------------------------------------------------------------------
# Architecture tables and dataset annotation
# ---------------------------------------------------------------------------


def load_arch_table(stream: TextIO | str) -> dict[str, ArchDescriptor]:
    """Load a JSON map of arch_id -> ArchDescriptor fields."""
    text = stream if isinstance(stream, str) else stream.read()
    data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError("arch table must be a JSON object mapping arch_id to fields")
    return {arch_id: ArchDescriptor(**fields) for arch_id, fields in data.items()}


@dataclass(frozen=True)
class AnnotatedRecord:
    """A run record joined with its effective (N, C) under one counting policy."""

    record: RunRecord
    n_effective: float
    c_effective: float


@dataclass(frozen=True)
class ComputeAnnotatedDataset:
    records: tuple[AnnotatedRecord, ...]
    policy: CountingPolicy
    label: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def annotate_compute(
    ds: Dataset,
    policy: CountingPolicy,
    arch_table: dict[str, ArchDescriptor] | None = None,
) -> ComputeAnnotatedDataset:
    """Join each record to its (n_effective, c_effective) under ``policy``.

    N is always read from the record's stored counts (total or non-embedding
    per ``embeddings_in_n``). C under six_nd is 6·N·D from those same counts;
    under detailed accounting it is 3 · flops_per_token · D, which requires
    the record's arch_id to resolve in ``arch_table``.
    """
    annotated = []
    for r in ds.records:
        n_eff = float(r.n(policy.n_convention))
        if policy.flop_method == "six_nd":
            c_eff = float(six_nd(r.n(policy.n_convention), r.tokens_seen))
        else:
            if r.arch_id is None:
                raise MissingArch(
                    f"record ({r.run_id}, step {r.step}) has no arch_id; "
                    "detailed FLOP accounting needs one"
                )
            if arch_table is None or r.arch_id not in (arch_table or {}):
                raise UnknownArch(f"arch_id {r.arch_id!r} not in arch table")
            arch = arch_table[r.arch_id]
            c_eff = 3.0 * flops_per_token(arch, policy.embeddings_in_c) * r.tokens_seen
        annotated.append(AnnotatedRecord(r, n_eff, c_eff))
    desc = (
        f"counting:{policy.flop_method},emb_n={'in' if policy.embeddings_in_n else 'out'},"
        f"emb_c={'in' if policy.embeddings_in_c else 'out'}"
    )
    label = f"{ds.label} | {desc}" if ds.label else desc
    return ComputeAnnotatedDataset(tuple(annotated), policy, label)
