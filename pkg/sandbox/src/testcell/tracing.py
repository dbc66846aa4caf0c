"""Line coverage over one function's body, measured in-process.

Executable lines come from the compiled code object (recursing into nested
code objects for comprehensions and closures), with the ``def`` line
excluded; single-expression one-liners fall back to the def line so the
denominator is never empty. Executed lines come from a settrace hook
filtered to the assembled module's filename.
"""

from __future__ import annotations

import dis
import sys
import types

MODULE_FILENAME = "__test__.py"


def executable_lines(func) -> set[int]:
    code = func.__code__

    def collect(co: types.CodeType) -> set[int]:
        lines = {line for _, line in dis.findlinestarts(co) if line is not None}
        for const in co.co_consts:
            if isinstance(const, types.CodeType):
                lines |= collect(const)
        return lines

    lines = collect(code)
    lines.discard(code.co_firstlineno)
    if not lines:
        lines = {code.co_firstlineno}
    return lines


class LineTracer:
    def __init__(self, filename: str = MODULE_FILENAME):
        self.filename = filename
        self.executed: set[int] = set()

    def _local(self, frame, event, arg):
        if event == "line":
            self.executed.add(frame.f_lineno)
        return self._local

    def _global(self, frame, event, arg):
        if frame.f_code.co_filename == self.filename:
            if event == "line":
                self.executed.add(frame.f_lineno)
            return self._local
        return None

    def __enter__(self) -> "LineTracer":
        sys.settrace(self._global)
        return self

    def __exit__(self, *exc_info) -> None:
        sys.settrace(None)

    def fraction_for(self, func) -> float:
        body = executable_lines(func)
        return len(self.executed & body) / len(body)
