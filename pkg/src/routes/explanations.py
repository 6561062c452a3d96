import argparse
import logging
from pathlib import Path
from typing import List

import pandas as pd

from src.exceptions import CheckpointError
from src.repository import reports
from src.repository.checkpoints import load_strategy
from src.routes.common import add_common_flags, run_command
from src.schemas import ExperimentConfig
from src.services.deep_mvh import PolicyStack
from src.services.explain import global_importance, per_step_heatmap, shap_variable_importance
from src.services.messages_templates import CHECKPOINT_NOT_FOUND

logger = logging.getLogger(__name__)


def explain_handler(args: argparse.Namespace, config: ExperimentConfig, out: Path) -> List[Path]:
    """
    The explain_handler function writes SHAP variable importances for a trained agent: a per-step heatmap
    and its step average for deep-MVH, pooled attributions for the stationary DDPG policy.

    :param args: argparse.Namespace: Parsed flags
    :param config: ExperimentConfig: Checkpoint, sample sizes and seed
    :param out: Path: Output directory
    :return: The written paths
    """
    if config.checkpoint is None:
        raise CheckpointError(CHECKPOINT_NOT_FOUND.format(path=None))
    agent = load_strategy(config.checkpoint)
    features = agent.env.feature_names
    outputs = []
    if isinstance(agent, PolicyStack):
        heatmap = per_step_heatmap(agent, config.shap_background, config.shap_instances, config.seed)
        outputs.append(reports.write_heatmap(heatmap, features, out / 'heatmap.csv'))
        outputs.append(reports.render_heatmap(heatmap, features, out / 'heatmap.svg'))
        importance = heatmap.mean(axis=0)
    else:
        result = global_importance(agent, config.shap_background, config.shap_instances, config.seed)
        outputs.append(reports.write_shap(result, out / 'shap.csv'))
        importance = shap_variable_importance(result)
    ranking = pd.DataFrame({'feature': features, 'importance': importance})
    logger.info("SHAP variable importance: %s", dict(zip(features, importance.round(4))))
    outputs.append(reports.write_table(ranking, out / 'importance.csv'))
    return outputs


def register(subparsers) -> None:
    parser = subparsers.add_parser('explain', help='Shapley attributions of a trained agent')
    add_common_flags(parser)
    parser.set_defaults(handler=lambda args: run_command('explain', args, explain_handler))
