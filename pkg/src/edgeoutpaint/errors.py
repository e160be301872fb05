"""Exception hierarchy and the CLI exit code attached to each class."""


class OutpaintError(Exception):
    exit_code = 1


class IngestError(OutpaintError):
    exit_code = 10


class ShapeError(OutpaintError, ValueError):
    exit_code = 11


class ConfigError(OutpaintError, ValueError):
    exit_code = 12


class MaskError(OutpaintError, ValueError):
    exit_code = 13


class NumericsError(OutpaintError, ArithmeticError):
    exit_code = 14

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ProvenanceError(OutpaintError):
    exit_code = 15


class CheckpointError(OutpaintError):
    exit_code = 16
