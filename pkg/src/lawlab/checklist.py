"""Filled reproducibility checklist generated from a config/report pair.

Every bullet of the scaling-law reporting checklist is answered from config
and report fields; anything the experiment genuinely cannot answer (this lab
consumes run records, it does not train models) is emitted as NOT SPECIFIED
rather than silently dropped, so the answered-line count always equals the
bullet count.
"""

from __future__ import annotations

from pathlib import Path

from .config import ExperimentConfig
from .errors import HashMismatch

NOT_SPECIFIED = "NOT SPECIFIED"

_FORM_TEXT = {
    "chinchilla": "L(N, D) = E + A/N^alpha + B/D^beta",
    "tied": "L(N, D) = E + A/N^alpha + B/D^alpha (shared exponent)",
    "kaplan": "L(N, D) = [(N_c/N)^(alpha_n/alpha_d) + D_c/D]^alpha_d (decreasing orientation)",
}
_FORM_PARAMS = {
    "chinchilla": "E, A, B, alpha, beta (E, A, B optimized as natural logs)",
    "tied": "E, A, B, alpha (E, A, B optimized as natural logs)",
    "kaplan": "N_c, D_c, alpha_n, alpha_d (N_c, D_c optimized as natural logs)",
}
_FORM_PRINCIPLE = {
    "chinchilla": "additive risk decomposition: an irreducible floor plus "
    "capacity-limited and data-limited error terms",
    "tied": "additive risk decomposition with the extra assumption that the "
    "optimal tokens-per-parameter ratio is compute-independent",
    "kaplan": "expected power-law limit behaviors, encoded with an N-D "
    "interaction inside the bracket",
}
_FORM_ASSUMPTIONS = {
    "chinchilla": "N and D contribute independently (no interaction term)",
    "tied": "no N-D interaction, and equal exponents (constant optimal D/N)",
    "kaplan": "N and D interact through the bracketed sum",
}
_OPTIMIZER_TEXT = {
    "lbfgs": "L-BFGS (two-loop recursion with backtracking line search)",
    "bfgs": "BFGS (dense inverse-Hessian update with backtracking line search)",
    "nls": "Levenberg-Marquardt nonlinear least squares",
    "grid": "pure grid search over a densified initialization grid",
}


def _fmt_num(v) -> str:
    return f"{v:g}"


def _form_answer(cfg: dict, report: dict) -> str:
    text = _FORM_TEXT[cfg["hypothesis"]["form"]]
    if cfg["isoflop"]["enabled"]:
        text += "; additionally the ratio law N*(C) = N0 * C^a via the isoFLOP route"
    return text


def _counting_answer(cfg: dict, report: dict) -> str:
    c = cfg["counting"]
    n_side = "including" if c["embeddings_in_n"] else "excluding"
    if c["flop_method"] == "six_nd":
        c_side = f"C = {_fmt_num(c['flop_constant'])}*N*D from the same N"
    else:
        c_side = (
            "C = 3 * forward-FLOPs/token * D from the architecture table, "
            + ("including" if c["embeddings_in_c"] else "excluding")
            + " embedding FLOPs"
        )
    return f"N counts parameters {n_side} embedding matrices; {c_side}"


def _checkpoints_answer(cfg: dict, report: dict) -> str:
    f = cfg["data"]["filters"]
    policy = f["checkpoint_policy"]
    if policy == "final_only":
        return "one per run: the final checkpoint"
    if policy == "all":
        return "all recorded checkpoints of every run"
    return f"all checkpoints from {f['checkpoint_fraction']:.0%} of training onward"


def _lr_answer(cfg: dict, report: dict) -> str:
    f = cfg["data"]["filters"]
    policy = f["lr_policy"]
    base = (
        "training-side hyperparameters are not set by this lab; "
        "learning-rate record policy: "
    )
    if policy == "fixed":
        return base + f"fixed({f['fixed_lr']})"
    if policy == "sweep_optimal":
        return base + "per-(N, D) sweep, keeping the lowest-loss learning rate"
    return base + "all learning rates kept"


def _init_answer(cfg: dict, report: dict) -> str:
    init = cfg["init"]
    strategy = init["strategy"]
    grid_info = ""
    fit_block = report.get("fit") or {}
    strat_echo = fit_block.get("strategy") or {}
    if strat_echo.get("grid"):
        counts = "x".join(str(ax["count"]) for ax in strat_echo["grid"].values())
        grid_info = f" over a {counts} grid"
    if strategy == "full_grid":
        return f"optimizing from every grid point{grid_info}"
    if strategy == "best_of_grid":
        return f"optimizing from the single lowest-objective grid point{grid_info}"
    if strategy == "top_k_of_grid":
        return f"optimizing from the {init['k']} lowest-objective grid points{grid_info}"
    if strategy == "random_k":
        return f"optimizing from {init['k']} seeded random grid points (seed {init['seed']}){grid_info}"
    if init.get("preset"):
        return f"a fixed reference vector: preset {init['preset']!r} from {init['preset_file']}"
    return "a fixed user-supplied parameter vector"


def _coverage_answer(cfg: dict, report: dict) -> str:
    ds = report.get("dataset") or {}
    stages = ds.get("filters") or []
    chain = "; ".join(
        f"{s['description']} ({s['before']} -> {s['after']})" for s in stages
    )
    return (
        f"{ds.get('n_ingested', '?')} records ingested, {ds.get('n_fitted', '?')} fitted; "
        f"filters: {chain or 'none'}; no other outlier removal is performed"
    )


def _validation_answer(cfg: dict, report: dict) -> str:
    parts = []
    validation = report.get("validation") or {}
    goodness = validation.get("goodness")
    if goodness:
        parts.append(
            f"goodness of fit on log loss: R2={goodness['r2_log']:.6g}, "
            f"RMSE={goodness['rmse_log']:.6g}"
        )
    else:
        parts.append("goodness of fit: not run")
    if cfg["validation"]["split_c"] is not None:
        extrap = validation.get("extrapolation") or {}
        parts.append(
            f"extrapolation holdout above C={_fmt_num(cfg['validation']['split_c'])}: "
            f"max log-error {extrap.get('max_log_error', float('nan')):.6g}"
        )
    else:
        parts.append("extrapolation: NOT SPECIFIED / not run")
    if cfg["validation"]["bootstrap"] is not None:
        b = cfg["validation"]["bootstrap"]
        parts.append(
            f"confidence intervals: bootstrap percentile (b={b['b']}, seed={b['seed']})"
        )
    else:
        parts.append("confidence intervals: NOT SPECIFIED / not run")
    return "; ".join(parts)


# (section, question, answer function) for every checklist bullet.
BULLETS: list[tuple[str, str, callable]] = [
    (
        "Scaling Law Hypothesis",
        "What is the form of the power law?",
        _form_answer,
    ),
    (
        "Scaling Law Hypothesis",
        "What are the variables related by (included in) the power law?",
        lambda cfg, rep: (
            f"N: model parameters ({cfg['data']['filters']['n_convention']} convention), "
            "D: training tokens, L: validation cross-entropy loss (nats)"
        ),
    ),
    (
        "Scaling Law Hypothesis",
        "What are the parameters to fit?",
        lambda cfg, rep: _FORM_PARAMS[cfg["hypothesis"]["form"]],
    ),
    (
        "Scaling Law Hypothesis",
        "On what principles is this form derived?",
        lambda cfg, rep: _FORM_PRINCIPLE[cfg["hypothesis"]["form"]],
    ),
    (
        "Scaling Law Hypothesis",
        "Does this form make assumptions about how the variables are related?",
        lambda cfg, rep: _FORM_ASSUMPTIONS[cfg["hypothesis"]["form"]],
    ),
    (
        "Training Setup",
        "How many models are trained?",
        lambda cfg, rep: (
            f"none by this lab; {rep.get('dataset', {}).get('n_runs', '?')} distinct runs "
            "contributed the fitted records"
        ),
    ),
    (
        "Training Setup",
        "At which sizes?",
        lambda cfg, rep: _range_answer(rep, "n_param_range", "parameters"),
    ),
    (
        "Training Setup",
        "On how much data each? On what data? Is any data repeated within the training for a model?",
        lambda cfg, rep: _range_answer(rep, "d_token_range", "tokens")
        + "; data sources: per-record 'source' tags; repetition " + NOT_SPECIFIED,
    ),
    (
        "Training Setup",
        "How are model size, dataset size, and compute budget size counted? "
        "Are any parameters excluded (e.g., embedding layers)? How is compute cost calculated?",
        _counting_answer,
    ),
    (
        "Training Setup",
        "Are code/code snippets provided for calculating these variables if applicable?",
        lambda cfg, rep: "yes: the `lawlab flops` command exposes the parameter/FLOP calculator",
    ),
    (
        "Training Setup",
        "How are hyperparameters chosen (e.g., optimizer, learning rate schedule, batch size)? "
        "Do they change with scale?",
        _lr_answer,
    ),
    (
        "Training Setup",
        "What other settings must be decided (e.g., model width vs. depth)? Do they change with scale?",
        lambda cfg, rep: NOT_SPECIFIED + " (training-side decision, not recorded)",
    ),
    (
        "Training Setup",
        "Is the training code open source?",
        lambda cfg, rep: NOT_SPECIFIED + " (this lab consumes run records, it does not train)",
    ),
    (
        "Data Collection",
        "Are the model checkpoints provided openly?",
        lambda cfg, rep: NOT_SPECIFIED,
    ),
    (
        "Data Collection",
        "How many checkpoints per model are evaluated to fit each scaling law? Which ones, if so?",
        _checkpoints_answer,
    ),
    (
        "Data Collection",
        "What evaluation metric is used? On what dataset?",
        lambda cfg, rep: (
            "validation cross-entropy loss in nats, as stored in the run ledger; "
            "evaluation dataset " + NOT_SPECIFIED
        ),
    ),
    (
        "Data Collection",
        "Are the raw evaluation metrics modified, e.g., through loss interpolation, "
        "centering around a mean, scaling logarithmically, etc?",
        lambda cfg, rep: (
            "yes: losses are interpolated between checkpoints in (ln C, ln loss) "
            "for the isoFLOP route"
            if cfg["isoflop"]["enabled"]
            else "no"
        ),
    ),
    (
        "Data Collection",
        "If the above is done, is code for modifying the metric provided?",
        lambda cfg, rep: (
            "yes: the interpolation is part of this package"
            if cfg["isoflop"]["enabled"]
            else "not applicable (metrics are used as recorded)"
        ),
    ),
    (
        "Fitting Algorithm",
        "What objective (loss) is used?",
        lambda cfg, rep: cfg["objective"]["kind"]
        + (
            f", delta={_fmt_num(cfg['objective']['delta'])}"
            if cfg["objective"]["kind"] in ("huber", "log_huber")
            else ""
        )
        + (f", space={cfg['objective']['space']}" if cfg["objective"]["space"] else ""),
    ),
    (
        "Fitting Algorithm",
        "What algorithm is used to fit the equation?",
        lambda cfg, rep: _OPTIMIZER_TEXT[cfg["optimizer"]["kind"]],
    ),
    (
        "Fitting Algorithm",
        "What hyperparameters are used for this algorithm?",
        lambda cfg, rep: (
            f"tol={_fmt_num(cfg['optimizer']['tol'])}, "
            f"max_iter={cfg['optimizer']['max_iter']}, "
            f"grad_mode={cfg['optimizer']['grad_mode']}, "
            f"memory={cfg['optimizer']['memory']}, "
            f"density_multiplier={cfg['optimizer']['density_multiplier']}"
        ),
    ),
    (
        "Fitting Algorithm",
        "How is this algorithm initialized?",
        _init_answer,
    ),
    (
        "Fitting Algorithm",
        "Are all datapoints collected used to fit the equations? For example, are any "
        "outliers dropped? Are portions of the datapoints used to fit different equations?",
        _coverage_answer,
    ),
    (
        "Fitting Algorithm",
        "How is the correctness of the scaling law considered? Extrapolation, "
        "Confidence Intervals, Goodness of Fit?",
        _validation_answer,
    ),
]


def _range_answer(report: dict, key: str, unit: str) -> str:
    rng = (report.get("dataset") or {}).get(key)
    if not rng:
        return NOT_SPECIFIED
    return f"{rng[0]:.4g} to {rng[1]:.4g} {unit} across the fitted records"


def render_checklist(config: ExperimentConfig, report: dict) -> str:
    """Markdown checklist: one answered line per bullet."""
    if report.get("config_sha256") != config.sha256():
        raise HashMismatch(
            "report was produced from a different config "
            f"(report {report.get('config_sha256')!r} != config {config.sha256()!r})"
        )
    lines = ["# Scaling Law Reproducibility Checklist", ""]
    current_section = None
    for section, question, answer_fn in BULLETS:
        if section != current_section:
            lines.append(f"## {section}")
            lines.append("")
            current_section = section
        answer = answer_fn(config.raw, report)
        lines.append(f"- **{question}** {answer}")
    lines.append("")
    return "\n".join(lines)


def write_checklist(config: ExperimentConfig, report: dict, out_path: str | Path) -> None:
    Path(out_path).write_text(render_checklist(config, report), encoding="utf-8")
