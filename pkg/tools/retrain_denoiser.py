"""Retrain only the denoiser (wide trunk) on top of the committed VAE."""

import sys
import time
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from roomagent.motion.conditioning import ControlEncoder  # noqa: E402
from roomagent.motion.diffusion import Denoiser, NoiseSchedule  # noqa: E402
from roomagent.motion.executor import MotionExecutor  # noqa: E402
from roomagent.motion.synthetic import build_dataset  # noqa: E402
from roomagent.motion.training import (  # noqa: E402
    TrainConfig, train_denoiser, write_loss_csv,
)
from roomagent.motion.vae import ModelConfig  # noqa: E402

CKPT = REPO / "checkpoints" / "default.ckpt"


def main():
    ex = MotionExecutor.load(CKPT)
    cfg = ModelConfig(**{**ex.cfg.to_dict(),
                         "denoiser_width": 128, "denoiser_layers": 3,
                         "denoiser_heads": 4, "denoiser_ff": 512})
    ex.cfg = cfg
    rng = np.random.default_rng(17)
    ex.denoiser = Denoiser(cfg, rng)
    ex.control_encoder = ControlEncoder(cfg.latent_dim, rng)
    ex.schedule = NoiseSchedule()

    data = build_dataset(260, seed=1234)
    data = ex.normalizer.normalize_samples(data)
    lat = np.concatenate([ex.vae.encode(s.clip)[0].tokens for s in data[::4]])
    ex.latent_scale = float(max(lat.std(), 1e-3))
    print("latent scale:", ex.latent_scale, flush=True)

    cfg_t = TrainConfig(denoiser_steps=12000, warmup_steps=300, lr=4.5e-4,
                        batch_size=12, seed=77, high_t_fraction=0.4,
                        dropout=False)
    t0 = time.time()
    losses = train_denoiser(ex.denoiser, ex.vae, ex.control_encoder, data,
                            ex.schedule, cfg_t, log_every=500,
                            latent_scale=ex.latent_scale)
    print(f"trained in {(time.time() - t0) / 60:.0f} min", flush=True)
    ex.save(CKPT)
    write_loss_csv(REPO / "checkpoints" / "loss_curve4.csv", losses, "denoiser-wide")
    print("saved", flush=True)


if __name__ == "__main__":
    main()
