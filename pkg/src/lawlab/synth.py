"""Deterministic synthetic training-run data generated from known laws.

The test and demo story of this package is desk-scale replication: draw law
parameters, synthesize checkpoint records from them (optionally with
multiplicative log-normal noise and a learning-rate penalty), then check that
the fitting machinery recovers what generated the data.

Sizes are drawn so the model-capacity term sweeps through the irreducible
error (from dominating it to vanishing against it); that makes every sampled
parameter set identifiable from the data regardless of where it sits in the
default initialization grid.
"""

from __future__ import annotations

import math

import numpy as np

from .counting import ArchDescriptor, count_params
from .forms import ChinchillaParams, TiedParams, predict_loss
from .ledger import Dataset, RunRecord


def sample_params(rng: np.random.Generator, tied: bool = False):
    """Law parameters from the interior of the default initialization grid."""
    log_e = rng.uniform(-0.5, 1.0)
    log_a = rng.uniform(5.0, 20.0)
    log_b = rng.uniform(5.0, 20.0)
    alpha = rng.uniform(0.25, 0.85)
    if tied:
        return TiedParams(log_e, log_a, log_b, alpha)
    beta = rng.uniform(0.25, 0.85)
    return ChinchillaParams(log_e, log_a, log_b, alpha, beta)


def identifiable_nd(params, count: int, rng: np.random.Generator):
    """(n, d) integer lists whose deficit terms span ~[0.03, 30] x E.

    Extreme grid-interior parameters can put these counts far beyond int64;
    plain Python ints keep them exact.
    """
    log_e, log_a, log_b = params.log_e, params.log_a, params.log_b
    alpha, beta = params.alpha, params.beta
    t_n = rng.uniform(math.log(0.03), math.log(30.0), size=count)
    t_d = rng.uniform(math.log(0.03), math.log(30.0), size=count)
    ln_n = (log_a - log_e - t_n) / alpha
    ln_d = (log_b - log_e - t_d) / beta
    n = [max(2, int(round(v))) for v in np.exp(ln_n)]
    d = [max(2, int(round(v))) for v in np.exp(ln_d)]
    return n, d


def final_checkpoint_dataset(
    params,
    count: int = 200,
    seed: int = 0,
    noise_sigma: float = 0.0,
    label: str = "synthetic",
) -> Dataset:
    """One final-checkpoint record per synthetic run."""
    rng = np.random.default_rng(seed)
    form = "tied" if isinstance(params, TiedParams) else "chinchilla"
    n, d = identifiable_nd(params, count, rng)
    loss = np.asarray(
        predict_loss(form, params, np.array(n, dtype=float), np.array(d, dtype=float))
    )
    if noise_sigma > 0:
        loss = loss * np.exp(noise_sigma * rng.standard_normal(count))
    records = [
        RunRecord(
            run_id=f"syn{i:04d}",
            n_total=n[i],
            n_nonembed=n[i],
            tokens_seen=d[i],
            step=1,
            total_steps=1,
            peak_lr=1e-3,
            loss=float(loss[i]),
            source="synthetic",
        )
        for i in range(count)
    ]
    return Dataset(tuple(records), label=label)


def isoflop_dataset(
    params,
    sizes: list[int],
    rho_lo: float = 1.0,
    rho_hi: float = 400.0,
    n_checkpoints: int = 25,
    seed: int = 0,
    noise_sigma: float = 0.0,
    label: str = "synthetic-isoflop",
) -> Dataset:
    """Runs over a size ladder with geometrically spaced token checkpoints.

    Each run of size n is checkpointed at tokens-per-parameter ratios spaced
    geometrically in [rho_lo, rho_hi], giving every run a wide compute hull so
    isoFLOP budgets are bracketed by several runs.
    """
    rng = np.random.default_rng(seed)
    form = "tied" if isinstance(params, TiedParams) else "chinchilla"
    ratios = np.geomspace(rho_lo, rho_hi, n_checkpoints)
    records = []
    for n in sizes:
        tokens = sorted({max(1, int(round(rho * n))) for rho in ratios})
        for step, d in enumerate(tokens, start=1):
            loss = float(predict_loss(form, params, float(n), float(d)))
            if noise_sigma > 0:
                loss *= math.exp(noise_sigma * rng.standard_normal())
            records.append(
                RunRecord(
                    run_id=f"iso-n{n}",
                    n_total=n,
                    n_nonembed=n,
                    tokens_seen=d,
                    step=step,
                    total_steps=len(tokens),
                    peak_lr=1e-3,
                    loss=loss,
                    source="synthetic",
                )
            )
    return Dataset(tuple(records), label=label)


# Size-dependent optimal learning rate used by the demo generator: small
# models prefer the largest sweep point, large models the smallest.
_LR_SWEEP = ("0.004", "0.002", "0.001")


def _optimal_lr(n_total: int) -> str:
    if n_total < 3e7:
        return "0.004"
    if n_total < 3e8:
        return "0.002"
    return "0.001"


def _lr_penalty(lr: str, n_total: int) -> float:
    """Multiplicative loss penalty for training away from the optimal LR."""
    gap = abs(math.log2(float(lr) / float(_optimal_lr(n_total))))
    return 1.0 + 0.04 * gap


def demo_arch_table() -> dict[str, ArchDescriptor]:
    """A small ladder of transformer shapes for counting-sensitive tests."""
    shapes = {
        "tiny": ArchDescriptor(5, 448, 7, 64, 1792, 50257, 2048, "gated_three_matrix"),
        "small": ArchDescriptor(8, 512, 8, 64, 2048, 50257, 2048, "gated_three_matrix"),
        "medium": ArchDescriptor(14, 768, 12, 64, 3072, 50257, 2048, "gated_three_matrix"),
        "large": ArchDescriptor(20, 1280, 20, 64, 5120, 50257, 2048, "gated_three_matrix"),
        "xl": ArchDescriptor(26, 1792, 28, 64, 7168, 50257, 2048, "gated_three_matrix"),
    }
    return shapes


def lab_dataset(
    params=None,
    seed: int = 0,
    noise_sigma: float = 0.0,
    n_checkpoints: int = 8,
    rho_final: float = 30.0,
    lr_sweep: bool = True,
    label: str = "synthetic-lab",
) -> tuple[Dataset, dict[str, ArchDescriptor]]:
    """A full synthetic lab: arch ladder x LR sweep x mid-training checkpoints.

    Records at the optimal learning rate follow the generating law exactly
    (up to optional noise); off-optimal learning rates carry a deterministic
    multiplicative penalty, so LR policies have real work to do.
    """
    if params is None:
        params = ChinchillaParams(log_e=0.35, log_a=6.2, log_b=7.1, alpha=0.34, beta=0.29)
    form = "tied" if isinstance(params, TiedParams) else "chinchilla"
    rng = np.random.default_rng(seed)
    table = demo_arch_table()
    records = []
    for arch_id, arch in table.items():
        n_total = count_params(arch, True)
        n_nonembed = count_params(arch, False)
        d_final = int(rho_final * n_total)
        lrs = _LR_SWEEP if lr_sweep else (_optimal_lr(n_total),)
        for lr in lrs:
            run_id = f"{arch_id}-lr{lr}"
            penalty = _lr_penalty(lr, n_total)
            for step in range(1, n_checkpoints + 1):
                d = max(1, d_final * step // n_checkpoints)
                base = float(predict_loss(form, params, float(n_total), float(d)))
                loss = base * penalty
                if noise_sigma > 0:
                    loss *= math.exp(noise_sigma * rng.standard_normal())
                records.append(
                    RunRecord(
                        run_id=run_id,
                        n_total=n_total,
                        n_nonembed=n_nonembed,
                        tokens_seen=d,
                        step=step,
                        total_steps=n_checkpoints,
                        peak_lr=float(lr),
                        loss=loss,
                        source="synthetic",
                        arch_id=arch_id,
                        peak_lr_raw=lr,
                    )
                )
    return Dataset(tuple(records), label=label), table
