from timecl.scenario.core import (ITEM_TASK, PAD, PROFILE_TASK, Interaction, InteractionStore,
                                  ProfileRecord, ScenarioBundle, TaskSpec, TaskView)
from timecl.scenario.generate import GenConfig, generate_synthetic
from timecl.scenario.io import ingest_logs, load_bundle, save_bundle
from timecl.scenario.views import (StatsTable, history, materialize, new_item_counts,
                                   new_item_stats, new_items_per_user, split, task_intervals)

__all__ = [
    "ITEM_TASK", "PAD", "PROFILE_TASK", "GenConfig", "Interaction", "InteractionStore",
    "ProfileRecord", "ScenarioBundle", "StatsTable", "TaskSpec", "TaskView",
    "generate_synthetic", "history", "ingest_logs", "load_bundle", "materialize",
    "new_item_counts", "new_item_stats", "new_items_per_user", "save_bundle", "split",
    "task_intervals",
]
