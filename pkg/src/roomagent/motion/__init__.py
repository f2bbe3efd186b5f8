from .frames import FPS, JOINTS, MotionClip, Pose2, stance_clip, world_joints
from .vae import CausalVae, LatentSeq, ModelConfig
from .diffusion import Denoiser, NoiseSchedule, SamplerConfig, ddim_sample, q_sample
from .conditioning import ControlEncoder, ControlValues, embed_caption
from .executor import MotionExecutor, localize_command
from .training import TrainConfig, TrainSample, train_denoiser, train_vae

__all__ = [
    "FPS", "JOINTS", "MotionClip", "Pose2", "stance_clip", "world_joints",
    "CausalVae", "LatentSeq", "ModelConfig",
    "Denoiser", "NoiseSchedule", "SamplerConfig", "ddim_sample", "q_sample",
    "ControlEncoder", "ControlValues", "embed_caption",
    "MotionExecutor", "localize_command",
    "TrainConfig", "TrainSample", "train_denoiser", "train_vae",
]
