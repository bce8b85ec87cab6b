from rich.console import Console
from rich.table import Table
from rich.panel import Panel
from rich import box
from dataclasses import dataclass
from typing import List, Optional


@dataclass
class IterationRecord:
    stage: str
    iteration: int
    objective: float
    grad_norm: float
    step: float = 1.0
    damping: float = 0.0
    elapsed: Optional[float] = None


class FitLogger:
    """Optimizer trace: one record per Newton iteration or outer evaluation."""

    def __init__(self, max_rows: int = 40, enabled: bool = True):
        self.enabled = enabled
        self.console = Console(stderr=True)
        self.records: List[IterationRecord] = []
        self.max_rows = max_rows

    def log_iteration(
        self,
        stage: str,
        iteration: int,
        objective: float,
        grad_norm: float,
        step: float = 1.0,
        damping: float = 0.0,
        elapsed: Optional[float] = None,
    ) -> None:
        # Recorded even when disabled so callers can inspect the trace afterwards.
        self.records.append(
            IterationRecord(stage, iteration, objective, grad_norm, step, damping, elapsed)
        )

    def _truncate_rows(self, rows: List[IterationRecord]) -> tuple[List[IterationRecord], int]:
        """Keep the first and last halves when the trace is longer than max_rows."""
        if len(rows) <= self.max_rows:
            return rows, 0
        half = self.max_rows // 2
        return rows[:half] + rows[-half:], len(rows) - 2 * half

    def display_summary(self, title: str = "Optimizer trace") -> None:
        """Display all logged iterations as one table."""
        if not self.enabled or not self.records:
            return
        rows, dropped = self._truncate_rows(self.records)
        table = Table(box=box.SIMPLE, show_header=True, header_style="bold blue")
        for name in ("stage", "iter", "objective", "|grad|", "step", "damping", "time (s)"):
            table.add_column(name, justify="right")
        for i, rec in enumerate(rows):
            if dropped and i == len(rows) // 2:
                table.add_row("...", f"[{dropped} rows]", "", "", "", "", "")
            table.add_row(
                rec.stage,
                str(rec.iteration),
                f"{rec.objective:.6f}",
                f"{rec.grad_norm:.3e}",
                f"{rec.step:.3g}",
                f"{rec.damping:.3g}",
                "" if rec.elapsed is None else f"{rec.elapsed:.3f}",
            )
        self.console.print(Panel(table, title=f"[bold blue]{title}[/bold blue]", box=box.ROUNDED))
