"""Access guard separating weak supervision from evaluation.

Training must never read ground-truth 3D poses. Every access to a GT
pose field goes through the global guard: it always counts, and inside a
``forbid()`` scope it raises immediately. The trainer wraps its whole
loop in ``forbid()``; tests assert the counter stays untouched.
"""

from __future__ import annotations

from contextlib import contextmanager

from .errors import ContractError


class GtAccessGuard:
    def __init__(self):
        self.access_count = 0
        self._forbid_depth = 0

    def note_access(self) -> None:
        self.access_count += 1
        if self._forbid_depth > 0:
            raise ContractError(
                "ground-truth 3D pose accessed inside a weak-supervision scope"
            )

    @contextmanager
    def forbid(self):
        self._forbid_depth += 1
        try:
            yield self
        finally:
            self._forbid_depth -= 1


GT_GUARD = GtAccessGuard()
