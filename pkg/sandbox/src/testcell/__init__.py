"""Isolated execution worker for (function, unit-test) jobs.

One JSON job object on stdin, one JSON result object on stdout. The tests
run in a sacrificial child process inside a fresh scratch directory, with
risky operations shimmed and OS resource limits applied, so a hostile or
broken job can neither touch the host filesystem nor outlive its timeout.
"""

__version__ = "0.1.0"
