import sys
from typing import Any, Dict, Iterable, Optional, TextIO


class ConsoleUI:
    """Terminal output for the sphere-depth CLI. Results go to stdout, chatter to stderr."""

    @staticmethod
    def banner(version: str, core_hash: str, stream: TextIO = None):
        stream = stream or sys.stderr
        banner_text = (
            "\n"
            "    ┌───────────────────────────────────────────────────────────────┐\n"
            f"    │  SPHERE-DEPTH {version:<12} core {core_hash:<12}                    │\n"
            "    │  360° depth consistency, refinement and benchmarks            │\n"
            "    └───────────────────────────────────────────────────────────────┘\n"
        )
        print(banner_text, file=stream)

    @staticmethod
    def config_echo(command: str, settings: Dict[str, Any], stream: TextIO = None) -> str:
        """One line naming the command and every setting that shapes its output."""
        fields = " ".join(f"{key}={value}" for key, value in settings.items())
        line = f"# sphere-depth {command} {fields}"
        print(line, file=stream or sys.stdout)
        return line

    @staticmethod
    def step_header(title: str, subtitle: Optional[str] = None, stream: TextIO = None):
        stream = stream or sys.stderr
        print(f"\n  ## {title.upper()}", file=stream)
        if subtitle:
            print(f"     {subtitle}", file=stream)
        print("-" * 67, file=stream)

    @staticmethod
    def status_line(label: str, status: str, stream: TextIO = None):
        print(f"  [ {status:^10} ] {label}", file=stream or sys.stderr)

    @staticmethod
    def result(stream: TextIO = None, **fields):
        """Machine-readable key=value result line on stdout."""
        parts = []
        for key, value in fields.items():
            if isinstance(value, float):
                value = f"{value:.6f}"
            parts.append(f"{key}={value}")
        print(" ".join(parts), file=stream or sys.stdout)

    @staticmethod
    def table(header: str, rows: Iterable[str], stream: TextIO = None):
        stream = stream or sys.stdout
        print(header, file=stream)
        print("-" * len(header), file=stream)
        for row in rows:
            print(row, file=stream)

    @staticmethod
    def error(message: str, stream: TextIO = None):
        print(f"error: {message}", file=stream or sys.stderr)
