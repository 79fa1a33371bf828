"""The end-to-end model: sensors in, occupancy probabilities out.

One Pipeline owns every trainable module plus the diffusion schedule, and
knows which side of the vehicle/server split each parameter lives on.
The variant forwards (lossless / awgn / digital) share the fused map and
differ only in what happens between the channel encoder and the
compressor.
"""

import torch
import torch.nn as nn

from .cameras import CameraRig, default_rig
from .channel import BevCompressor, ChannelDecoder, ChannelEncoder, awgn
from .config import ExperimentConfig
from .denoiser import Denoiser
from .diffusion import DiffusionSchedule, linear_schedule, sample
from .digital import digital_transmit
from .encoder import FusionEncoder
from .grid import BevGridSpec
from .segmentation import SegmentationDecoder

VEHICLE_SIDE_MODULES = ("fusion", "channel_encoder")
SERVER_SIDE_MODULES = ("channel_decoder", "compressor", "segmenter", "denoiser")


class Pipeline(nn.Module):
    def __init__(self, config: ExperimentConfig, grid: BevGridSpec,
                 rig: CameraRig):
        super().__init__()
        enc = config["encoder"]
        ch = config["channel"]
        diff = config["diffusion"]
        self.grid = grid
        self.config_hash = config.hash()
        self.fusion = FusionEncoder(
            rig, grid, backbone=enc["backbone"],
            image_channels=enc["image_channels"],
            radar_channels=enc["radar_channels"],
            fusion=enc["fusion"], overlap=enc["overlap"])
        fused = self.fusion.out_channels
        self.channel_encoder = ChannelEncoder(
            in_channels=fused, ratio=ch["ratio"], hidden=tuple(ch["hidden"]))
        self.channel_decoder = ChannelDecoder(
            out_channels=fused, ratio=ch["ratio"], hidden=tuple(ch["hidden"]))
        self.compressor = BevCompressor(
            in_channels=fused, out_channels=ch["compressed_channels"])
        self.segmenter = SegmentationDecoder(
            in_channels=ch["compressed_channels"],
            grid_size=grid.resolution)
        self.denoiser = Denoiser(base=diff["base"])
        self.schedule: DiffusionSchedule = linear_schedule(
            steps=diff["steps"], beta_min=diff["beta_min"],
            beta_max=diff["beta_max"],
            reference_steps=diff["reference_steps"])

    # --- encoding ---------------------------------------------------------

    def fuse_inputs(self, views: torch.Tensor,
                    pillars: torch.Tensor) -> torch.Tensor:
        """(B, K, 3, H, W) + (B, 3, G, G) -> fused (B, C, G, G)."""
        return self.fusion(views, pillars)

    def transmit_analog(self, fused: torch.Tensor, snr_db,
                        seed: int) -> torch.Tensor:
        """Channel encoder -> AWGN -> channel decoder; None snr = noiseless."""
        symbols = self.channel_encoder(fused)
        if snr_db is not None:
            symbols = awgn(symbols, snr_db, seed)
        return self.channel_decoder(symbols)

    # --- segmentation variants -------------------------------------------

    def seg_from_features(self, fused: torch.Tensor) -> torch.Tensor:
        return self.segmenter(self.compressor(fused))

    def run_lossless(self, fused: torch.Tensor) -> torch.Tensor:
        """Stage-1 path: no channel at all."""
        return self.seg_from_features(fused)

    def run_awgn(self, fused: torch.Tensor, snr_db: float,
                 seed: int) -> torch.Tensor:
        return self.seg_from_features(self.transmit_analog(fused, snr_db, seed))

    def run_digital(self, fused: torch.Tensor, snr_db: float, seed: int):
        """Digital baseline per sample; returns (probs or None, outages).

        fused: (B, C, G, G); probs rows for outage samples are zeros and
        flagged in the boolean outage vector.
        """
        b = fused.shape[0]
        g = self.grid.resolution
        probs = fused.new_zeros((b, g, g))
        outages = []
        for i in range(b):
            res = digital_transmit(fused[i], snr_db, seed + i)
            outages.append(res.outage)
            if not res.outage:
                feats = res.features.to(fused.dtype).unsqueeze(0)
                probs[i] = self.seg_from_features(feats)[0]
        return probs, outages

    # --- diffusion --------------------------------------------------------

    def refine(self, condition: torch.Tensor, horizon,
               seed: int) -> torch.Tensor:
        """Diffusion refinement/prediction of decoded masks."""
        return sample(self.denoiser, condition, horizon, self.schedule, seed)

    # --- split bookkeeping ------------------------------------------------

    def side_tags(self) -> dict:
        """Map every parameter name to 'vehicle' or 'server'."""
        tags = {}
        for name, _ in self.named_parameters():
            top = name.split(".", 1)[0]
            if top in VEHICLE_SIDE_MODULES:
                tags[name] = "vehicle"
            elif top in SERVER_SIDE_MODULES:
                tags[name] = "server"
            else:
                raise RuntimeError(f"parameter {name} has no split side")
        return tags

    def stage_modules(self, stage: int):
        """Modules introduced by each training stage."""
        if stage == 1:
            return [self.fusion, self.compressor, self.segmenter]
        if stage == 2:
            return [self.channel_encoder, self.channel_decoder]
        if stage == 3:
            return [self.denoiser]
        raise ValueError(f"stage must be 1, 2 or 3, got {stage}")


def build_pipeline(config: ExperimentConfig, grid: BevGridSpec = None,
                   rig: CameraRig = None) -> Pipeline:
    """Construct a pipeline (and its default grid/rig) from a config."""
    data = config["data"]
    if grid is None:
        e = data["extent_m"]
        grid = BevGridSpec(extent_m=(-e, e, -e, e),
                           resolution=data["grid_size"])
    if rig is None:
        rig = default_rig(num_views=data["num_views"],
                          image_size=data["image_size"])
    rig.validate_coverage(grid)
    return Pipeline(config, grid, rig)
