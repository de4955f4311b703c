"""Curriculum-driven multi-agent reinforcement learning in particle worlds.

The package couples a task-space curriculum engine (kernel-repelled particle
expansion over task configurations plus progression over agent counts) with a
sparse-reward PPO trainer on cooperative particle scenarios.
"""

from .errors import CurriculumExhausted, GenerationError, TrainingDiverged
from .tasks import Scenario, ScenarioSpec, TaskParams
from .world import active_backend

__all__ = [
    "CurriculumExhausted",
    "GenerationError",
    "TrainingDiverged",
    "Scenario",
    "ScenarioSpec",
    "TaskParams",
    "active_backend",
]
