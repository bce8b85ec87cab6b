"""
Command-level console logger for the smoothgev CLI.
"""

from datetime import datetime
from typing import Any, Iterable, Mapping, Optional, Sequence

from rich.console import Console
from rich.rule import Rule
from rich.table import Table
from rich import box


class RunLogger:
    """
    Tracks one CLI command: start banner, settings, progress lines, result tables
    and the final status. Output goes to stderr so stdout stays clean.
    """

    def __init__(self, enabled: bool = True, console: Optional[Console] = None):
        self.enabled = enabled
        self.console = console or Console(stderr=True)
        self.command = ""
        self.start_time: Optional[datetime] = None
        self.warnings: list[str] = []

    def log_command_start(self, command: str, settings: Mapping[str, Any]):
        """Log the start of a command with its resolved settings."""
        self.command = command
        self.start_time = datetime.now()
        if not self.enabled:
            return
        self.console.print(
            Rule(f"[bold green]smoothgev {command}[/bold green] [dim]{self.start_time:%H:%M:%S}[/dim]")
        )
        table = Table(box=box.SIMPLE, show_header=False)
        table.add_column("key", style="cyan")
        table.add_column("value")
        for key, value in settings.items():
            table.add_row(key, str(value))
        self.console.print(table)

    def log_info(self, message: str):
        if not self.enabled:
            return
        self.console.print(f"  [cyan]>[/cyan] {message}")

    def log_warning(self, message: str):
        self.warnings.append(message)
        if not self.enabled:
            return
        self.console.print(f"  [yellow]warning:[/yellow] {message}")

    def log_table(self, title: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]):
        """Render a result table; floats are shown with four decimals."""
        if not self.enabled:
            return
        table = Table(title=title, box=box.ROUNDED, header_style="bold magenta")
        for col in columns:
            table.add_column(str(col), justify="right")
        for row in rows:
            table.add_row(*(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))
        self.console.print(table)

    def log_artifact(self, path):
        if not self.enabled:
            return
        self.console.print(f"  [green]wrote[/green] {path}")

    def log_final_status(self, exit_code: int, message: str = ""):
        if not self.enabled:
            return
        elapsed = ""
        if self.start_time is not None:
            elapsed = f" in {(datetime.now() - self.start_time).total_seconds():.1f}s"
        style = "bold green" if exit_code == 0 else "bold red"
        status = "done" if exit_code == 0 else f"failed (exit {exit_code})"
        self.console.print(Rule(f"[{style}]{self.command} {status}{elapsed}[/{style}]"))
        if message:
            self.console.print(message)

    def log_error(self, message: str):
        """Errors are shown even when the logger is disabled."""
        self.console.print(f"[bold red]error:[/bold red] {message}")
