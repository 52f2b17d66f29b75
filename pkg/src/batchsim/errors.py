"""Exception hierarchy shared across subsystems."""


class BatchSimError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(BatchSimError, ValueError):
    pass


class InvalidInputError(BatchSimError, ValueError):
    pass


class SceneParseError(BatchSimError):
    """Malformed scene file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SceneCorruptError(BatchSimError):
    pass


class SaturationError(BatchSimError):
    """No resident asset can accept another environment."""


class ContractViolation(BatchSimError, RuntimeError):
    pass


class EpisodeSamplingError(BatchSimError):
    pass


class WorkerError(BatchSimError):
    """A simulation worker failed; ``env_index`` identifies the environment."""

    def __init__(self, env_index: int, cause: BaseException):
        super().__init__(f"env {env_index}: {cause!r}")
        self.env_index = env_index
        self.cause = cause


class AssetFaultError(BatchSimError):
    def __init__(self, view_index: int, scene_id: str):
        super().__init__(f"view {view_index} references non-resident asset {scene_id[:12]}")
        self.view_index = view_index
        self.scene_id = scene_id


class ShapeError(BatchSimError, ValueError):
    pass


class TrainingFault(BatchSimError):
    pass


class ConfigError(BatchSimError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)


class CheckpointError(BatchSimError):
    """Malformed or corrupted checkpoint; ``offset`` is the failing byte position when known."""

    def __init__(self, message: str, offset: int = -1):
        super().__init__(message if offset < 0 else f"{message} (at byte offset {offset})")
        self.offset = offset
