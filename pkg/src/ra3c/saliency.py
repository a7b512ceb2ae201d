"""Guided-backprop saliency along a policy rollout, with region scoring."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .actions import sample_action
from .autodiff import ParamSet
from .net import NetConfig, forward, guided_backprop, initial_hidden
from .seeding import rng_for
from .sim.env import Env
from .sim.render import RAIL, ROAD, SKY, RenderConfig, render_labels
from .sim.track import Track


def road_edge_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels on or next to a road boundary: rails plus road/off-road transitions, dilated by one pixel."""
    road = labels == ROAD
    edge = (labels == RAIL) | (road ^ ndimage.binary_erosion(road, border_value=1))
    return ndimage.binary_dilation(edge)


@dataclass
class SaliencyFrame:
    step: int
    frame_u8: np.ndarray
    saliency: np.ndarray
    labels: np.ndarray
    action: int

    @property
    def sky_mean(self) -> float:
        m = self.labels == SKY
        return float(self.saliency[m].mean()) if m.any() else float("nan")

    @property
    def edge_mean(self) -> float:
        m = road_edge_mask(self.labels)
        return float(self.saliency[m].mean()) if m.any() else float("nan")


def collect_saliency(net: NetConfig, params: ParamSet, track: Track, frames: int, every: int = 30,
                     seed: int = 0, start_checkpoint: int = 0) -> list[SaliencyFrame]:
    """Drive the policy and compute a saliency map every ``every`` steps.

    A crash simply restarts the rollout at the next checkpoint.
    """
    _, h, w = net.input_shape
    cfg = RenderConfig(h, w)
    env = Env(track, cfg)
    rng = rng_for(seed, "saliency")
    obs = env.reset(start_checkpoint)
    hidden = initial_hidden(net)
    out: list[SaliencyFrame] = []
    step = 0
    restarts = 0
    while len(out) < frames:
        res = forward(net, params, obs.frame, obs.speed, obs.prev_action, hidden)
        action = sample_action(res.policy, rng)
        if step % every == 0:
            sal = guided_backprop(net, params, obs.frame, obs.speed, obs.prev_action, hidden, action)
            out.append(SaliencyFrame(step, obs.frame_u8, sal, render_labels(env.state, track, cfg), action))
        hidden = res.hidden
        obs = env.step(action)
        step += 1
        if env.done:
            restarts += 1
            obs = env.reset((start_checkpoint + restarts) % env.num_checkpoints)
            hidden = initial_hidden(net)
    return out


def export_saliency(net: NetConfig, params: ParamSet, track: Track, frames: int, every: int, seed: int,
                    out_dir: str | Path) -> list[dict]:
    from .plots import save_saliency
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, f in enumerate(collect_saliency(net, params, track, frames, every, seed)):
        save_saliency(f.frame_u8, f.saliency, out / f"saliency_{i:03d}.png")
        np.save(out / f"saliency_{i:03d}.npy", f.saliency)
        rows.append({"index": i, "step": f.step, "action": f.action, "edge_mean": f.edge_mean,
                     "sky_mean": f.sky_mean})
    with open(out / "saliency.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["index", "step", "action", "edge_mean", "sky_mean"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows
