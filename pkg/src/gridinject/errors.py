"""Single exception type carrying a stable diagnostic code.

Every failure mode in the package raises :class:`GridInjectError` with a
short machine-readable ``code`` (stable across releases, suitable for CLI
exit-code mapping and tests) plus a free-form ``details`` dict holding the
offending data (points, pairs, indices).
"""

from __future__ import annotations


class GridInjectError(Exception):
    """Raised for every diagnosed failure; ``code`` is the stable contract."""

    def __init__(self, code: str, message: str, **details):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        def _clean(v):
            if isinstance(v, dict):
                return {k: _clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [_clean(x) for x in v]
            if hasattr(v, "tolist"):
                return v.tolist()
            if isinstance(v, (bool, int, float, str)) or v is None:
                return v
            return str(v)

        return {
            "code": self.code,
            "message": self.message,
            "details": _clean(self.details),
        }


# Codes raised for malformed input or violated preconditions (CLI exit 2).
PRECONDITION_CODES = frozenset(
    {
        "schema-error",
        "bad-circle",
        "eta-too-large",
        "degenerate-segment",
        "unknown-tolerance",
    }
)

# Codes raised while evaluating a map at a point (CLI exit 3 for `map eval`).
EVALUATION_CODES = frozenset(
    {
        "undefined-at-point",
        "out-of-domain",
        "jacobian-unreliable",
    }
)
