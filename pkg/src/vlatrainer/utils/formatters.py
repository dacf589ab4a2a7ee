from vlatrainer.model.dataset import DatasetManifest
from vlatrainer.model.labels import LabelManifest, RprmReport
from vlatrainer.model.metrics import IterationMetrics, SftEpoch
from vlatrainer.model.report import EvalReport, SuccessStat


def format_rate(stat: SuccessStat) -> str:
    return (
        f"{stat.success_rate * 100:6.1f}%  [{stat.ci_low * 100:5.1f}, {stat.ci_high * 100:5.1f}]"
        f"  ({stat.successes}/{stat.episodes})"
    )


def format_eval_text(report: EvalReport) -> str:
    lines = [f"policy: {report.policy}  tag: {report.tag}  episodes/task: {report.episodes_per_task}"]
    for task in report.tasks:
        lines.append(f"task {task.task_id:3d}  {task.suite_id:8s} {format_rate(task)}  {task.instruction}")
    for suite_id, stat in report.suites.items():
        lines.append(f"suite {suite_id:8s}    {format_rate(stat)}")
    lines.append(f"overall           {format_rate(report.overall)}")
    return "\n".join(lines)


def format_demo_manifest(manifest: DatasetManifest) -> str:
    lines = [f"kept {manifest.count} of {manifest.attempted} expert episodes (digest {manifest.digest[:12]})"]
    lines.extend(f"warning: {warning}" for warning in manifest.warnings)
    return "\n".join(lines)


def format_sft_curve(curve: list[SftEpoch]) -> str:
    if len(curve) == 0:
        return "No behavior cloning epochs ran."
    last = curve[-1]
    return f"behavior cloning: {len(curve)} epochs, final loss {last.loss:.4f}, token accuracy {last.token_accuracy:.3f}"


def format_label_manifest(manifest: LabelManifest) -> str:
    return (
        f"labeled {manifest.episodes_labeled} of {manifest.episodes_seen} episodes "
        f"(skipped {manifest.episodes_skipped}): {manifest.positives} positive, {manifest.negatives} negative"
    )


def format_rprm_report(report: RprmReport) -> str:
    return (
        f"reward model: {report.train_examples} train / {report.holdout_examples} held-out steps, "
        f"held-out accuracy {report.holdout_accuracy:.3f}, final loss {report.final_loss:.4f}"
    )


def format_train_summary(metrics: IterationMetrics | None) -> str:
    if metrics is None:
        return "No RL iterations ran; the starting policy is unchanged."
    return (
        f"run {metrics.tag}: {metrics.iter + 1} iterations, {metrics.env_steps} env steps, "
        f"last rollout success {metrics.success_rate:.3f}"
    )
