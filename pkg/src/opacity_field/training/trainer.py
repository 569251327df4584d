"""Patch-batched training loop with alternating generator/discriminator updates."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..autodiff import Optimizer, Tensor, backward, load_checkpoint, save_checkpoint, tape_scope
from ..camera import CameraView
from ..carving import DepthBounds, ShapeFromSilhouette, full_range_bounds
from ..config import RunConfig
from ..metrics import PSNR_CAP
from ..model import OpacityFieldModel
from ..renderer import WHITE
from ..sampling import partition_patches, patch_rng
from ..scene import GroundTruthView
from .losses import (
    Discriminator,
    PerceptualBackbone,
    loss_discriminator,
    loss_generator_adv,
    loss_intermediate,
    loss_perceptual,
    loss_reconstruction,
)

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "L_C", "L_P", "L_N", "L_adv", "L_D", "psnr_fg", "sad_alpha"]


class NumericalError(RuntimeError):
    """A loss became non-finite; ``dump_path`` holds the offending batch."""

    def __init__(self, message: str, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path


def fit_proxy(config: RunConfig, views: Sequence[GroundTruthView]) -> ShapeFromSilhouette | None:
    """Carved proxy from the training mattes; None when ERS is off."""
    if not config.use_ers:
        return None
    sfs = ShapeFromSilhouette(config.carve_resolution, config.carve_threshold, config.dilate_radius,
                              config.margin_voxels, config.bounds)
    return sfs.fit([v.alpha for v in views], [v.view for v in views])


def sampling_bounds(config: RunConfig, proxy: ShapeFromSilhouette | None, cameras: Sequence[CameraView]) -> list[DepthBounds]:
    """Per-view ray bounds: carved-proxy bounds, or the whole scene box when ERS is off."""
    if proxy is None:
        return [full_range_bounds(c, config.bounds) for c in cameras]
    return proxy.transform(cameras)


def _pad(x: np.ndarray, Hp: int, Wp: int, fill=0.0) -> np.ndarray:
    out = np.full((Hp, Wp) + x.shape[2:], fill, dtype=np.float32)
    out[: x.shape[0], : x.shape[1]] = x
    return out


@dataclass
class _ViewData:
    camera: CameraView
    composite: np.ndarray  # (Hp, Wp, 3) over white
    alpha: np.ndarray
    premult: np.ndarray
    inside: np.ndarray
    n_patch_cols: int


class Trainer:
    def __init__(self, config: RunConfig, views: Sequence[GroundTruthView], bounds: Sequence[DepthBounds] | None = None):
        if len(views) == 0:
            raise ValueError("training needs at least one view")
        self.config = config
        self.weights = config.loss_weights()
        self.model = OpacityFieldModel(config.model_config())
        self.backbone = PerceptualBackbone(seed=config.perceptual_seed)
        self.disc = Discriminator(config.disc_channels, seed=config.seed + 7) if config.use_gan else None
        self.opt_g = Optimizer(self.model.parameters(), config.learning_rate)
        self.opt_d = Optimizer(self.disc.parameters(), config.learning_rate) if self.disc else None
        self.step = 0
        if bounds is None:
            self.proxy = fit_proxy(config, views)
            bounds = sampling_bounds(config, self.proxy, [v.view for v in views])
        else:
            self.proxy = None
        self.bounds = list(bounds)
        K = config.K
        self.views: list[_ViewData] = []
        self.pool = []
        for k, (gt, b) in enumerate(zip(views, self.bounds)):
            H, W = gt.alpha.shape
            Hp, Wp = -(-H // K) * K, -(-W // K) * K
            self.views.append(_ViewData(gt.view, _pad(gt.composite(WHITE), Hp, Wp, 1.0), _pad(gt.alpha, Hp, Wp),
                                        _pad(gt.premultiplied, Hp, Wp), _pad(np.ones((H, W)), Hp, Wp), Wp // K))
            self.pool.extend(partition_patches(gt.view, b, K, view_id=k))

    # ------------------------------------------------------------------

    def _targets(self, patches):
        K = self.config.K
        I, A, PM, M = [], [], [], []
        for p in patches:
            v = self.views[p.view_id]
            sl = (slice(p.row, p.row + K), slice(p.col, p.col + K))
            I.append(v.composite[sl].transpose(2, 0, 1))
            A.append(v.alpha[sl][None])
            PM.append(v.premult[sl].transpose(2, 0, 1))
            M.append(v.inside[sl][None])
        return np.stack(I), np.stack(A), np.stack(PM), np.stack(M)

    def _real_patches(self, rng: np.random.Generator, n: int) -> np.ndarray:
        K = self.config.K
        out = []
        for _ in range(n):
            v = self.views[int(rng.integers(len(self.views)))]
            H = int(v.inside[:, 0].sum())
            W = int(v.inside[0].sum())
            r = int(rng.integers(max(H - K, 0) + 1))
            c = int(rng.integers(max(W - K, 0) + 1))
            out.append(v.composite[r:r + K, c:c + K].transpose(2, 0, 1))
        return np.stack(out)

    def batch(self, step: int):
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, step, 1])
        n = min(cfg.batch_patches, len(self.pool))
        idx = np.sort(rng.choice(len(self.pool), size=n, replace=False))
        patches = [self.pool[i] for i in idx]
        rngs = [patch_rng(cfg.seed, p.view_id, p.index[0] * self.views[p.view_id].n_patch_cols + p.index[1], step)
                for p in patches]
        return patches, rngs, rng

    def generator_losses(self, patches, rngs, targets) -> dict:
        """Forward pass and every generator loss term, as tensors."""
        I_gt, A_gt, _, mask = targets
        w = self.weights
        vol = self.model.volume(patches, rngs)
        out = self.model.render_maps(vol.fine, vol.premult_fine)
        B = np.ones((1, 3, 1, 1), np.float32)
        L_C = loss_reconstruction(out.composite, out.alpha, I_gt, A_gt, mask)
        L_P = loss_perceptual(out.composite, I_gt, out.alpha, A_gt, self.backbone, mask) * w.perceptual
        I_mlp = vol.premult_fine + (1.0 - vol.fine.coarse_alpha) * B
        I_mlp_c = vol.premult_coarse + (1.0 - vol.coarse.coarse_alpha) * B
        L_N = (loss_intermediate(I_mlp, vol.fine.coarse_alpha, I_gt, A_gt, w, self.backbone, mask)
               + loss_intermediate(I_mlp_c, vol.coarse.coarse_alpha, I_gt, A_gt, w, None, mask))
        terms = {"L_C": L_C, "L_P": L_P, "L_N": L_N, "out": out, "vol": vol}
        if self.disc is not None and w.lambda_adv > 0:
            terms["L_adv"] = loss_generator_adv(self.disc, out.composite)
        return terms

    def learning_rate(self, step: int) -> float:
        """Exponential decay from ``learning_rate`` to ``learning_rate * lr_final_ratio`` over ``steps``."""
        cfg = self.config
        return cfg.learning_rate * cfg.lr_final_ratio ** (min(step, cfg.steps) / max(cfg.steps, 1))

    def train_step(self) -> dict:
        cfg = self.config
        step = self.step
        lr = self.learning_rate(step)
        self.opt_g.learning_rate = lr
        if self.opt_d is not None:
            self.opt_d.learning_rate = lr
        patches, rngs, rng = self.batch(step)
        targets = self._targets(patches)
        with tape_scope():
            t = self.generator_losses(patches, rngs, targets)
            L_G = t["L_C"] + t["L_P"] + t["L_N"]
            total = L_G + t["L_adv"] * self.weights.lambda_adv if "L_adv" in t else L_G
            rec = {k: float(t[k].item()) for k in ("L_C", "L_P", "L_N")}
            rec["L_adv"] = float(t["L_adv"].item()) if "L_adv" in t else 0.0
            rec["L_G"] = float(L_G.item())
            if not all(np.isfinite(v) for v in rec.values()):
                self._abort(step, patches, rec)
            backward(total)
        self.opt_g.step()
        fake = t["out"].composite.data
        rec["L_D"] = 0.0
        if self.disc is not None:
            real = self._real_patches(rng, len(patches))
            self.disc.zero_grad()
            with tape_scope():
                L_D = loss_discriminator(self.disc, Tensor(fake), Tensor(real.astype(np.float32)))
                rec["L_D"] = float(L_D.item())
                if not np.isfinite(rec["L_D"]):
                    self._abort(step, patches, rec)
                backward(L_D)
            self.opt_d.step()
        rec.update(self._batch_metrics(t["out"], targets))
        rec["step"] = step
        self.step += 1
        return rec

    @staticmethod
    def _batch_metrics(out, targets) -> dict:
        _, A_gt, PM_gt, mask = targets
        a = out.alpha.data
        pm = a * out.F.data
        fg = (A_gt > 0) & (mask > 0)
        if fg.any():
            mse = float(np.mean(((pm - PM_gt) ** 2).transpose(1, 0, 2, 3)[:, fg[:, 0]]))
            psnr_fg = min(PSNR_CAP, 10 * np.log10(1.0 / max(mse, 1e-12)))
        else:
            psnr_fg = float("nan")
        sad = float(np.abs(a - A_gt)[mask > 0].sum() / 1000.0)
        return {"psnr_fg": float(psnr_fg), "sad_alpha": sad}

    def _abort(self, step, patches, rec):
        path = None
        if getattr(self, "out_dir", None) is not None:
            path = Path(self.out_dir) / f"nan_dump_step{step:06d}.npz"
            np.savez(path, view=[p.view_id for p in patches], row=[p.row for p in patches],
                     col=[p.col for p in patches], near=np.stack([p.near for p in patches]),
                     far=np.stack([p.far for p in patches]), losses=json.dumps(rec))
        raise NumericalError(f"non-finite loss at step {step}: {rec}", path)

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------

    def state_dict(self) -> dict:
        state = dict(self.model.state_dict())
        names_g = [n for n, _ in self.model.named_parameters()]
        state.update(self.opt_g.state(names_g, prefix="optim.g"))
        if self.disc is not None:
            state.update(self.disc.state_dict("disc."))
            state.update(self.opt_d.state([n for n, _ in self.disc.named_parameters("disc.")], prefix="optim.d"))
        state["meta.step"] = np.array([self.step], dtype=np.float32)
        return state

    def load_state_dict(self, state: dict) -> None:
        self.model.load_state_dict(state)
        self.opt_g.load_state([n for n, _ in self.model.named_parameters()], state, prefix="optim.g")
        if self.disc is not None:
            self.disc.load_state_dict(state, prefix="disc.")
            self.opt_d.load_state([n for n, _ in self.disc.named_parameters("disc.")], state, prefix="optim.d")
        self.step = int(np.asarray(state["meta.step"]).reshape(-1)[0])

    def save(self, path) -> None:
        save_checkpoint(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_checkpoint(path))

    # ------------------------------------------------------------------

    def run(self, steps: int | None = None, out_dir=None, callback=None) -> list[dict]:
        """Train for ``steps`` more steps; with ``out_dir``, write checkpoints, config and metrics CSV."""
        cfg = self.config
        steps = cfg.steps - self.step if steps is None else steps
        self.out_dir = Path(out_dir) if out_dir is not None else None
        writer = fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            cfg.save(self.out_dir / "config.json")
            fh = open(self.out_dir / "metrics.csv", "w", newline="")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(METRIC_COLUMNS)
        history = []
        try:
            for _ in range(steps):
                rec = self.train_step()
                history.append(rec)
                done = self.step
                if writer is not None and (done % cfg.log_interval == 0 or done == cfg.steps):
                    writer.writerow([rec["step"]] + [f"{rec[k]:.6g}" for k in METRIC_COLUMNS[1:]])
                    fh.flush()
                if done % cfg.log_interval == 0:
                    log.info("step %d L_C %.4g L_P %.4g L_N %.4g psnr_fg %.2f", rec["step"], rec["L_C"],
                             rec["L_P"], rec["L_N"], rec["psnr_fg"])
                if self.out_dir is not None and (done % cfg.checkpoint_interval == 0 or _ == steps - 1):
                    self.save(self.out_dir / f"ckpt_{done:06d}.bin")
                    self.save(self.out_dir / "ckpt_latest.bin")
                if callback is not None:
                    callback(rec)
        finally:
            if fh is not None:
                fh.close()
        return history
