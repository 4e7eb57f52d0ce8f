import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from lawlab.counting import ArchDescriptor, CountingPolicy, annotate_compute
from lawlab.forms import ChinchillaParams, TiedParams
from lawlab.ledger import Dataset, RunRecord, to_csv
from lawlab.objectives import FitProblem, ObjectiveSpec
from lawlab.synth import final_checkpoint_dataset


@pytest.fixture
def toy_arch():
    # 1 layer, d_model 2, 1 head of dim 2, ffn 4, vocab 3, seq_len 2
    return ArchDescriptor(
        n_layers=1,
        d_model=2,
        n_heads=1,
        head_dim=2,
        ffn_dim=4,
        vocab=3,
        seq_len=2,
        ffn_kind="two_matrix",
        tied_embeddings=False,
    )


@pytest.fixture
def known_params():
    return ChinchillaParams(log_e=0.4, log_a=8.0, log_b=9.0, alpha=0.45, beta=0.38)


@pytest.fixture
def tied_params():
    return TiedParams(log_e=0.3, log_a=7.0, log_b=7.8, alpha=0.5)


def make_record(run_id="r1", n=10**8, d=2 * 10**9, step=1, total=1, lr="0.001", loss=3.0, **kw):
    return RunRecord(
        run_id=run_id,
        n_total=n,
        tokens_seen=d,
        step=step,
        total_steps=total,
        peak_lr=float(lr),
        peak_lr_raw=lr,
        loss=loss,
        source="test",
        **kw,
    )


@pytest.fixture
def checkpoint_run():
    """One run with 10 checkpoints at training fractions 0.1 .. 1.0."""
    records = [
        make_record(run_id="run", d=10**8 * s, step=s, total=10, loss=4.0 - 0.1 * s)
        for s in range(1, 11)
    ]
    return Dataset(tuple(records), label="ckpt")


@pytest.fixture
def noiseless_problem(known_params):
    ds = final_checkpoint_dataset(known_params, count=60, seed=3)
    ann = annotate_compute(ds, CountingPolicy(True, True, "six_nd"))
    return FitProblem.from_annotated(ann, "chinchilla", ObjectiveSpec("log_huber", 1e-3))


@pytest.fixture
def synthetic_csv(tmp_path, known_params):
    ds = final_checkpoint_dataset(known_params, count=20, seed=11)
    path = tmp_path / "runs.csv"
    path.write_text(to_csv(ds), encoding="utf-8")
    return path


def write_config(tmp_path: Path, overrides: dict, name: str = "config.yaml") -> Path:
    path = tmp_path / name
    path.write_text(yaml.safe_dump(overrides), encoding="utf-8")
    return path


def write_arch_table(tmp_path: Path, table: dict[str, ArchDescriptor]) -> Path:
    path = tmp_path / "archs.json"
    payload = {
        arch_id: {
            "n_layers": a.n_layers,
            "d_model": a.d_model,
            "n_heads": a.n_heads,
            "head_dim": a.head_dim,
            "ffn_dim": a.ffn_dim,
            "vocab": a.vocab,
            "seq_len": a.seq_len,
            "ffn_kind": a.ffn_kind,
            "tied_embeddings": a.tied_embeddings,
        }
        for arch_id, a in table.items()
    }
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def rng(seed=0):
    return np.random.default_rng(seed)
