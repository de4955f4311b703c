"""Exception types shared across the package."""


class GenerationError(RuntimeError):
    """Raised when rejection sampling exhausts its attempt budget."""


class CurriculumExhausted(RuntimeError):
    """Raised when a training batch is requested from empty task queues."""


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss is encountered during an update."""
