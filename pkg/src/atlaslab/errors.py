"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`AtlasLabError`.
The value-like errors also derive from :class:`ValueError` so callers that only
know about the builtin still catch them.
"""


class AtlasLabError(Exception):
    """Base class for library errors."""


class NonpositiveRate(AtlasLabError, ValueError):
    """A stationary rate came out nonpositive, so the shift ``a`` is inadmissible."""


class DomainError(AtlasLabError, ValueError):
    """An argument lies outside the domain where a formula is defined."""


class ConfigError(AtlasLabError, ValueError):
    """A simulation or experiment configuration is malformed.

    ``field`` names the offending key when it is known, ``line`` the line of
    the config file.
    """

    def __init__(self, message, *, field=None, line=None):
        self.message = message
        self.field = field
        self.line = line
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class GeometryError(AtlasLabError, ValueError):
    """Coupling geometry preconditions are violated."""


class DegenerateDirection(AtlasLabError, ValueError):
    """The reflection direction has zero length."""


class InsufficientData(AtlasLabError, ValueError):
    """Too few replicas or samples for the requested estimate."""


class CheckFailure(AtlasLabError):
    """One or more verification checks failed.

    ``records`` holds the failing check records.
    """

    def __init__(self, records):
        self.records = list(records)
        names = ", ".join(str(r.get("name", "?")) for r in self.records)
        super().__init__(f"{len(self.records)} check(s) failed: {names}")
