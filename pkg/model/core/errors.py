from typing import Optional


class ShapeMismatchError(ValueError):
    """A tensor does not match the shape its layer expects."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class NonFiniteError(ValueError):
    """An activation or loss became NaN or infinite."""

    def __init__(self, message: str, layer_index: Optional[int] = None):
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)
        self.layer_index = layer_index


class TrainingDivergedError(NonFiniteError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class LayoutMismatchError(ValueError):
    """An individual's mask layout does not fit the network."""
