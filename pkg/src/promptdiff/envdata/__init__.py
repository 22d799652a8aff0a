from promptdiff.envdata.behavior import behavior_policy
from promptdiff.envdata.benchmark import default_benchmark, read_task_list, write_task_list
from promptdiff.envdata.dataset import (
    TaskDataset,
    Transition,
    generate_dataset,
    text_prompt_for,
    trajectory_prompt_for,
)
from promptdiff.envdata.env import ACTION_DIM, STATE_DIM, PointNavEnv, TaskSpec, env_step, transition
from promptdiff.envdata.io import read_dataset, write_dataset
from promptdiff.envdata.toy import TwoStateMdp, bimodal_dataset, constant_action_dataset, unimodal_dataset

__all__ = [
    "ACTION_DIM", "STATE_DIM", "PointNavEnv", "TaskDataset", "TaskSpec", "Transition", "TwoStateMdp",
    "behavior_policy", "bimodal_dataset", "constant_action_dataset", "default_benchmark", "env_step",
    "generate_dataset", "read_dataset", "read_task_list", "text_prompt_for", "trajectory_prompt_for",
    "transition", "unimodal_dataset", "write_dataset", "write_task_list",
]
