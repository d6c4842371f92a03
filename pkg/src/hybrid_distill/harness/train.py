"""Training runs driven by an :class:`ExperimentConfig`."""
from __future__ import annotations

import json
from pathlib import Path

from ..distiller import HybridDistiller
from ..policy import save_policy
from .config import ExperimentConfig
from .metrics import MetricsWriter


def run_train(config: ExperimentConfig) -> HybridDistiller:
    """Train, streaming one metrics record per iteration to ``out_dir/metrics.jsonl``.

    Also writes ``final_policy.txt`` and ``summary.json``. In verification
    mode wall-clock fields are left null so equal seeds give identical files.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    student = config.build_student()
    teachers = config.build_teachers()
    h = config.hybrid
    with MetricsWriter(out / "metrics.jsonl") as writer:
        model = HybridDistiller(
            teacher=teachers, teacher_weights=h.teacher_weights, reward_specs=config.rewards,
            lambda0=h.lambda0, alpha=h.alpha, gamma=h.gamma, group_size=h.group_size, topk=h.topk,
            learning_rate=h.learning_rate, baseline=h.baseline, use_dense=h.use_dense,
            n_iter=config.iterations, student_init=student, track_exact=config.track_exact,
            record_wall_clock=not config.verification_mode, threads=config.threads,
            random_state=config.seed, callback=writer.write,
        )
        model.fit(list(config.prompts))
    save_policy(model.student_, out / "final_policy.txt")
    summary = {
        "iterations": model.n_iter_,
        "seed": config.seed,
        "initial": {k: model.metrics_[0][k] for k in ("exact_kl", "exact_reward")} if model.metrics_ else None,
        "final": model.final_metrics_,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return model
