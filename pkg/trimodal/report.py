from __future__ import annotations
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass
import json
import logging
from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader
import numpy as np

from .coretypes import EModality, ScoreRecord, sort_modalities
from .errors import MetricError
from .evaluation import EvalReport, far_frr_curve, system_name, system_scores

logger = logging.getLogger(__name__)


def _percent(value: float | None, digits: int = 2) -> str:
    return "-" if value is None else f"{100.0 * value:.{digits}f}"


@dataclass(frozen=True)
class MeanStd:
    """Mean and sample standard deviation over repeated runs."""

    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> MeanStd:
        array = np.asarray(values, dtype=np.float64)
        std = float(array.std(ddof=1)) if array.size > 1 else 0.0
        return cls(float(array.mean()), std, int(array.size))

    def to_dict(self) -> dict[str, Any]:
        return {"mean": self.mean, "std": self.std, "n": self.n}


@dataclass(frozen=True)
class SystemSummary:
    """
    Aggregate of one system over runs with different seeds.

    Accuracies use the validation threshold when every run reported one,
    otherwise each run's own EER threshold.
    """

    protocol: str
    condition: str
    train_condition: str
    name: str
    fusion: str
    eer: MeanStd
    accuracy_overall: MeanStd
    accuracy_same_gender: MeanStd | None
    accuracy_opposite_gender: MeanStd | None
    relative_improvement: MeanStd | None

    def to_dict(self) -> dict[str, Any]:
        def optional(stats: MeanStd | None) -> dict[str, Any] | None:
            return None if stats is None else stats.to_dict()

        return {
            "protocol": self.protocol,
            "condition": self.condition,
            "train_condition": self.train_condition,
            "name": self.name,
            "fusion": self.fusion,
            "eer": self.eer.to_dict(),
            "accuracy_overall": self.accuracy_overall.to_dict(),
            "accuracy_same_gender": optional(self.accuracy_same_gender),
            "accuracy_opposite_gender": optional(self.accuracy_opposite_gender),
            "relative_improvement": optional(self.relative_improvement),
        }


def summarize_reports(reports: Sequence[EvalReport]) -> list[SystemSummary]:
    """
    Aggregate repeated evaluations into mean and standard deviation per system.

    Systems are grouped by protocol, evaluation and training condition, name and fusion.

    Args:
        reports (Sequence[EvalReport]): Reports of repeated runs.

    Returns:
        list[SystemSummary]: One summary per system, in first-seen order.
    """
    if not reports:
        raise MetricError("No reports to summarize.")
    groups: dict[tuple[str, ...], list[Any]] = defaultdict(list)
    for report in reports:
        for result in report.systems:
            key = (
                str(report.protocol),
                str(report.condition),
                str(report.train_condition),
                result.name,
                str(result.fusion),
            )
            groups[key].append(result)
    summaries = []
    for key, results in groups.items():
        use_valid = all(result.accuracy_at_valid is not None for result in results)
        accuracies = [
            result.accuracy_at_valid if use_valid else result.accuracy_at_eer for result in results
        ]

        def stratum(attribute: str) -> MeanStd | None:
            values = [getattr(accuracy, attribute) for accuracy in accuracies]
            values = [value for value in values if value is not None]
            return MeanStd.of(values) if values else None

        improvements = [
            result.relative_improvement
            for result in results
            if result.relative_improvement is not None
        ]
        summaries.append(
            SystemSummary(
                *key,
                MeanStd.of([result.eer for result in results]),
                MeanStd.of([accuracy.overall for accuracy in accuracies]),
                stratum("same_gender"),
                stratum("opposite_gender"),
                MeanStd.of(improvements) if improvements else None,
            )
        )
    return summaries


class ReportDocument:
    """
    Human-readable document rendered from a Jinja2 template.

    Attributes:
        context (dict): Template variables.
        text (str): The rendered document.
    """

    _environment = Environment(
        loader=FileSystemLoader(Path(__file__).parent / "templates"),
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    _environment.filters["percent"] = _percent
    template_file: str

    def __init__(self, **context: Any) -> None:
        self.context = context
        self.text = self._render_template()

    def _render_template(self) -> str:
        template = self._environment.get_template(self.template_file)
        return template.render(self.context)

    def __str__(self) -> str:
        return self.text


class EvalReportDocument(ReportDocument):
    """EER, accuracy, error-overlap and attention-weight tables of one report."""

    template_file = "eval_report.txt.j2"

    def __init__(self, report: EvalReport) -> None:
        super().__init__(
            report=report,
            regions=None if report.error_overlap is None else report.error_overlap.exclusive_regions(),
            has_valid=any(result.accuracy_at_valid is not None for result in report.systems),
        )


class SummaryDocument(ReportDocument):
    """Mean and standard deviation tables over repeated runs."""

    template_file = "summary.txt.j2"

    def __init__(self, summaries: Sequence[SystemSummary]) -> None:
        super().__init__(summaries=summaries)


def render_report(report: EvalReport) -> str:
    return EvalReportDocument(report).text


def render_summary(summaries: Sequence[SystemSummary]) -> str:
    return SummaryDocument(summaries).text


def far_frr_dump(records: Sequence[ScoreRecord], system: EModality) -> str:
    """`threshold<TAB>far<TAB>frr` lines of one system, ascending by threshold."""
    labels = [record.trial.label.is_target for record in records]
    thresholds, far, frr = far_frr_curve(system_scores(records, system), labels)
    return "".join(
        f"{threshold:.8f}\t{a:.8f}\t{r:.8f}\n" for threshold, a, r in zip(thresholds, far, frr)
    )


def write_report(
    report: EvalReport,
    out_dir: str | Path,
    records: Sequence[ScoreRecord] | None = None,
    stem: str = "report",
) -> list[Path]:
    """
    Write the JSON document, the rendered tables and, with records, the FAR/FRR dumps.

    Args:
        report (EvalReport): The report.
        out_dir (str | Path): Output directory.
        records (Sequence[ScoreRecord] | None, optional): Scored trials for the FAR/FRR dumps.
        stem (str, optional): File name prefix. Defaults to "report".

    Returns:
        list[Path]: Written files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{stem}.json", out_dir / f"{stem}.txt"]
    paths[0].write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths[1].write_text(render_report(report), encoding="utf-8")
    if records:
        modalities = sort_modalities(records[0].per_modality)
        systems = [(str(modality), modality) for modality in modalities]
        if records[0].fused is not None:
            systems.append((system_name(modalities), EModality.FUSED))
        for name, system in systems:
            path = out_dir / f"{stem}.{name}.farfrr.tsv"
            path.write_text(far_frr_dump(records, system), encoding="utf-8")
            paths.append(path)
    logger.debug("Wrote %d report files to %s.", len(paths), out_dir)
    return paths


def read_report(path: str | Path) -> EvalReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return EvalReport.from_dict(data)
    except (OSError, ValueError, KeyError, TypeError) as error:
        raise MetricError(f"Cannot read report '{path}': {error}") from None


def write_summary(summaries: Sequence[SystemSummary], out_dir: str | Path, stem: str = "summary") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / f"{stem}.json", out_dir / f"{stem}.txt"]
    paths[0].write_text(
        json.dumps([summary.to_dict() for summary in summaries], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    paths[1].write_text(render_summary(summaries), encoding="utf-8")
    return paths
