from timecl.model.arch import (ArchConfig, FrozenModel, ModelState, gated_mask, init_model,
                               load_checkpoint, save_checkpoint, snapshot, task_gates)
from timecl.model.losses import bpr_loss, ce_loss, contrastive_loss, mse_loss
from timecl.model.network import Grads, HiddenStates, forward, project, represent
from timecl.model.objectives import (autoregressive_loss, contrastive_views, gradients,
                                     item_task_loss, profile_task_loss, representation_mse)
from timecl.model.optim import Adam

__all__ = [
    "Adam", "ArchConfig", "FrozenModel", "Grads", "HiddenStates", "ModelState",
    "autoregressive_loss", "bpr_loss", "ce_loss", "contrastive_loss", "contrastive_views",
    "forward", "gated_mask", "gradients", "init_model", "item_task_loss", "load_checkpoint",
    "mse_loss", "profile_task_loss", "project", "represent", "representation_mse",
    "save_checkpoint", "snapshot", "task_gates",
]
