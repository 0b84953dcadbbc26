"""plugin.

Define what workflows are part of this plugin.
"""

import typing

import speedwagon

from .workflow_ablation import GraphCMAblationWorkflow
from .workflow_build_graphs import BuildClickGraphsWorkflow
from .workflow_describe_log import DescribeClickLogWorkflow
from .workflow_evaluate_graphcm import EvaluateGraphCMWorkflow
from .workflow_pgm_baselines import FitPgmClickModelsWorkflow
from .workflow_synthetic_log import GenerateSyntheticLogWorkflow
from .workflow_train_graphcm import TrainGraphCMWorkflow

active_workflows: typing.List[typing.Type[speedwagon.Workflow[typing.Any]]] = [
    BuildClickGraphsWorkflow,
    DescribeClickLogWorkflow,
    EvaluateGraphCMWorkflow,
    FitPgmClickModelsWorkflow,
    GenerateSyntheticLogWorkflow,
    GraphCMAblationWorkflow,
    TrainGraphCMWorkflow,
]
