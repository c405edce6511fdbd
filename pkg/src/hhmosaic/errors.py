"""Exception hierarchy shared by all modules."""


class HHMosaicError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(HHMosaicError, ValueError):
    pass


class DegenerateGeometryError(HHMosaicError, ValueError):
    pass


class RangeError(HHMosaicError, ValueError):
    pass


class NumericError(HHMosaicError, ArithmeticError):
    pass


class EmptyOverlapError(HHMosaicError, ValueError):
    pass


class FormatError(HHMosaicError, ValueError):
    pass


class TrainingDivergedError(NumericError):
    def __init__(self, epoch: int, iteration: int):
        super().__init__(f"loss became non-finite at epoch {epoch} (iteration {iteration})")
        self.epoch = epoch
        self.iteration = iteration
