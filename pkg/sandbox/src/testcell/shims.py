"""In-process interception of risky operations.

Installed inside the sacrificial child before any job code runs. Filesystem
mutations are redirected through a path check: anything targeting the job's
scratch directory proceeds, anything outside it raises SandboxViolation.
Reads are allowed everywhere. Network sockets, process spawning, and
process-control calls raise unconditionally.

Shimmed inventory (a documented superset of what jobs ever need):
  delete/move:   os.remove, os.unlink, os.rmdir, os.removedirs, os.rename,
                 os.renames, os.replace, os.truncate, shutil.rmtree, shutil.move
  create:        os.mkdir, os.makedirs, os.link, os.symlink
  write opens:   builtins.open / io.open (modes w/a/x/+), os.open with
                 write/create flags
  cwd:           os.chdir confined to the scratch tree
  network:       socket.socket, socket.create_connection, socket.socketpair
  processes:     subprocess.Popen, os.system, os.popen, os.exec*, os.spawn*,
                 os.fork, os.forkpty, os.posix_spawn, os.posix_spawnp
  proc control:  os.kill, os.killpg, os._exit, os.abort

The shims are cooperative (plain monkeypatching), which is the right level
for risky-but-not-adversarial corpus code; OS resource limits and the
parent's kill-on-timeout back them up. Container or namespace isolation can
be layered on top by running the worker command inside one.
"""

from __future__ import annotations

import builtins
import io
import os
import shutil
import socket
import subprocess


class SandboxViolation(RuntimeError):
    """A job attempted an operation the sandbox forbids."""


_open_real = builtins.open
_os_open_real = os.open
_chdir_real = os.chdir

_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_TRUNC | os.O_APPEND


def install(workdir: str) -> None:
    """Patch the current process; irreversible by design."""
    root = os.path.realpath(workdir)

    def inside(path) -> bool:
        if isinstance(path, int):  # file descriptor, already vetted at open
            return True
        resolved = os.path.realpath(os.fspath(path))
        return resolved == root or resolved.startswith(root + os.sep)

    def require_inside(operation: str, *paths) -> None:
        for path in paths:
            if not inside(path):
                raise SandboxViolation(f"{operation} outside the sandbox workdir: {path!r}")

    def confined(module, name: str, path_args: int = 1):
        real = getattr(module, name)
        label = f"{module.__name__}.{name}"

        def guarded(*args, **kwargs):
            require_inside(label, *args[:path_args])
            return real(*args, **kwargs)

        guarded.__name__ = name
        setattr(module, name, guarded)

    def forbidden(module, name: str):
        label = f"{module.__name__}.{name}"

        def raiser(*args, **kwargs):
            raise SandboxViolation(f"{label} is not allowed in the sandbox")

        raiser.__name__ = name
        setattr(module, name, raiser)

    # Deletion, movement, creation: allowed only inside the scratch tree.
    for name in ("remove", "unlink", "rmdir", "removedirs", "truncate", "mkdir", "makedirs"):
        confined(os, name, path_args=1)
    for name in ("rename", "renames", "replace", "link", "symlink"):
        confined(os, name, path_args=2)
    for name in ("rmtree", "move"):
        confined(shutil, name, path_args=1)

    def guarded_open(file, mode="r", *args, **kwargs):
        if any(flag in mode for flag in ("w", "a", "x", "+")):
            require_inside("open for write", file)
        return _open_real(file, mode, *args, **kwargs)

    builtins.open = guarded_open
    io.open = guarded_open

    def guarded_os_open(path, flags, *args, **kwargs):
        if flags & _WRITE_FLAGS:
            require_inside("os.open for write", path)
        return _os_open_real(path, flags, *args, **kwargs)

    os.open = guarded_os_open

    def guarded_chdir(path):
        require_inside("os.chdir", path)
        return _chdir_real(path)

    os.chdir = guarded_chdir

    # Network: no sockets of any kind.
    forbidden(socket, "socket")
    forbidden(socket, "create_connection")
    forbidden(socket, "socketpair")

    # Process spawning and control.
    forbidden(subprocess, "Popen")
    for name in ("system", "popen", "fork", "forkpty", "kill", "killpg", "_exit", "abort",
                 "posix_spawn", "posix_spawnp"):
        if hasattr(os, name):
            forbidden(os, name)
    for name in dir(os):
        if name.startswith("exec") or name.startswith("spawn"):
            forbidden(os, name)
