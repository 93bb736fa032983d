"""Forward-backward representations with conditional policy regularization."""

from .cpr import CriticEnsemble, Discriminator, critic_loss, discriminator_loss, discriminator_reward, ensemble_reduce
from .data import ReplayBuffer, RunningNormalizer, UnlabeledDataset, UnlabeledEpisode, emd_priorities
from .evaluation import emd, goal_metrics, infer_goal_latent, infer_reward_latent, infer_tracking_latents
from .fb import FBModel, fb_td_loss, fz_loss, ortho_loss, zero_shot_q
from .latent import NuConfig, er_fb_encode, project_to_sphere, relabel_batch, sample_nu
from .policy import Actor, actor_loss, actor_loss_bc, actor_loss_no_fz
from .trainer import Trainer, TrainerConfig

__version__ = "0.1.0"
