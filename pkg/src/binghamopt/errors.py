"""Exception types raised across the package."""


class BinghamOptError(Exception):
    """Base class for all package errors."""


class MeshParseError(BinghamOptError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshConfigError(BinghamOptError):
    """Boundary tags in the mesh file do not match the configured names."""


class TopologyError(BinghamOptError):
    pass


class GeometryError(BinghamOptError):
    pass


class InvertedMeshError(GeometryError):
    """A mesh update produced at least one cell with nonpositive area."""

    def __init__(self, message, cells=None):
        self.cells = cells
        super().__init__(message)


class SingularSystemError(BinghamOptError):
    def __init__(self, message, dof=None):
        self.dof = dof
        if dof is not None:
            message = f"{message} (zero pivot at dof {dof})"
        super().__init__(message)


class NonConvergenceError(BinghamOptError):
    """An iterative solve stopped without meeting its tolerance.

    ``report`` carries the partial iteration history (a ``NewtonReport`` or an
    ``OptTrace``).
    """

    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class PreconditionError(BinghamOptError):
    pass


class ConfigError(BinghamOptError):
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
