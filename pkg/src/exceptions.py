"""Error hierarchy shared by every lowrank-lens module.

Each error carries a ``detail`` payload and the CLI ``exit_code`` it maps to,
so command handlers can translate failures without inspecting messages.
"""
from typing import Any


class LensError(Exception):
    exit_code: int = 1

    def __init__(self, detail: Any = None, exit_code: int | None = None):
        self.detail = detail if detail is not None else self.__class__.__name__
        if exit_code is not None:
            self.exit_code = exit_code
        super().__init__(str(self.detail))


class InvalidInput(LensError):
    pass


class ShapeError(LensError):
    pass


class SchemaError(LensError):
    pass


class NumericalError(LensError):
    exit_code = 3

    def __init__(self, detail: Any = None, layer: str | None = None):
        self.layer = layer
        if layer is not None:
            detail = {"msg": detail or "non-finite value", "layer": layer}
        super().__init__(detail)


class FormatError(LensError):

    def __init__(self, detail: Any = None, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            detail = {"msg": detail, "offset": offset}
        super().__init__(detail)


class UnsupportedMethod(LensError):
    pass


class DegenerateSpectrum(LensError):
    pass


class DegenerateInput(LensError):
    pass


class DegenerateFeature(LensError):
    pass


class EmptyIntersection(LensError):
    pass


class MissingFeature(LensError):
    pass


class SingularDesign(LensError):
    pass


class InsufficientGroups(LensError):
    pass


class ConfigError(LensError):
    exit_code = 2

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__({"msg": "invalid configuration",
                          "violations": self.violations})


class MissingInputs(LensError):
    exit_code = 4

    def __init__(self, missing: list[str], command: str):
        self.missing = list(missing)
        self.command = command
        super().__init__({"msg": f"missing inputs, run `{command}` first",
                          "missing": self.missing})
