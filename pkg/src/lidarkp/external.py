"""External-process adapter: run a command with bytes on stdin, collect stdout.

Protocol shared by the enhancement and detection adapters: the tool reads
a PNG from standard input, writes its result to standard output, and
signals failure with a nonzero exit status.
"""

from __future__ import annotations

import shlex
import subprocess


class ExternalToolError(RuntimeError):
    def __init__(self, message: str, exit_status: int | None = None):
        super().__init__(message)
        self.exit_status = exit_status


def run_tool(command: str, payload: bytes, timeout_s: float = 30.0) -> bytes:
    if not command or not command.strip():
        raise ExternalToolError("empty external command")
    argv = shlex.split(command)
    try:
        proc = subprocess.run(
            argv,
            input=payload,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            timeout=timeout_s,
        )
    except subprocess.TimeoutExpired as exc:
        raise ExternalToolError(f"external tool timed out after {timeout_s}s: {argv[0]}") from exc
    except OSError as exc:
        raise ExternalToolError(f"cannot launch external tool {argv[0]}: {exc}") from exc
    if proc.returncode != 0:
        stderr = proc.stderr.decode(errors="replace").strip()
        raise ExternalToolError(
            f"external tool {argv[0]} failed with exit status {proc.returncode}: {stderr}",
            exit_status=proc.returncode,
        )
    return proc.stdout
