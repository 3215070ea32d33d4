"""Exception hierarchy.

Every error raised deliberately by the library derives from ``MeshRegError``.
The CLI maps each class to a distinct exit code (see ``EXIT_CODES``).
"""

from __future__ import annotations


class MeshRegError(Exception):
    """Base class for all library errors."""


class InvalidParams(MeshRegError, ValueError):
    pass


class InvalidMesh(MeshRegError, ValueError):
    """A mesh or transform violates its structural invariants."""


class ParseError(MeshRegError, ValueError):
    pass


class MeshIndexError(MeshRegError, IndexError):
    """A face references a vertex that does not exist."""


class UnsupportedFormat(MeshRegError, ValueError):
    pass


class MeshIOError(MeshRegError, OSError):
    pass


class DegenerateGeometry(MeshRegError, ValueError):
    pass


class EmptyInput(MeshRegError, ValueError):
    pass


class EmptyMesh(EmptyInput):
    pass


class DegenerateInput(MeshRegError, ValueError):
    """Point set is (numerically) coplanar or collinear."""


class AmbiguousOrientation(MeshRegError):
    """Global features cannot distinguish between candidate orientations."""


class EmptySlabs(MeshRegError):
    pass


class DegenerateCorrespondences(MeshRegError, ValueError):
    pass


class DegeneratePair(MeshRegError, ValueError):
    pass


class MissingNormals(MeshRegError, ValueError):
    pass


class NoHypothesisFound(MeshRegError):
    pass


# Ordered from most to least specific; the first isinstance match wins.
EXIT_CODES: list[tuple[type[BaseException], int]] = [
    (MeshIOError, 3),
    (UnsupportedFormat, 4),
    (ParseError, 4),
    (MeshIndexError, 4),
    (InvalidParams, 5),
    (InvalidMesh, 5),
    (DegenerateGeometry, 6),
    (DegenerateInput, 6),
    (DegenerateCorrespondences, 6),
    (DegeneratePair, 6),
    (EmptyInput, 6),
    (MissingNormals, 6),
    (AmbiguousOrientation, 7),
    (EmptySlabs, 8),
    (NoHypothesisFound, 9),
    (OSError, 3),
    (MeshRegError, 1),
]


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1
