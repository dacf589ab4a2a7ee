from typing import Optional


class VlaTrainerError(Exception):
    """Base class for every failure the trainer reports with a dedicated exit code."""


class ConfigError(VlaTrainerError, ValueError):
    pass


class NumericError(VlaTrainerError, ArithmeticError):
    pass


class CheckpointError(VlaTrainerError):

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(f"{message} (field: {field})" if field else message)
        self.field = field


class GraphError(VlaTrainerError, ValueError):

    def __init__(self, message: str, node_id: Optional[int] = None):
        super().__init__(f"node {node_id}: {message}" if node_id is not None else message)
        self.node_id = node_id


class ShapeError(GraphError):
    pass


class TokenizerError(VlaTrainerError, ValueError):

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(f"{message} at position {position}" if position is not None else message)
        self.position = position


class OrchestratorError(VlaTrainerError, RuntimeError):

    def __init__(self, message: str, env_id: Optional[int] = None):
        super().__init__(f"env {env_id}: {message}" if env_id is not None else message)
        self.env_id = env_id
