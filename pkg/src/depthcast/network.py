"""The depth-forecasting network and its training-time pose companion.

Four stages: a shared window-attention backbone extracts a per-frame feature
pyramid (gradients flow only through the most recent context frame); a
spatio-temporal fusion block correlates the four frames per scale; a shared
recursive predictor advances the fused state one future frame per
application; a single decoder turns any state pyramid into sigmoid disparity
maps at four scales. The pose network is a small strided-conv encoder used
only for training supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import nn
from .core import tensor as T
from .core.tensor import Tensor
from .geometry import Pose, axis_angle_to_matrix


@dataclass(frozen=True)
class NetworkConfig:
    image_height: int = 64
    image_width: int = 96
    patch_size: int = 4
    stage_depths: tuple = (2, 2, 2, 2)
    stage_channels: tuple = (32, 64, 128, 256)
    stage_heads: tuple = (2, 2, 4, 4)
    window_size: int = 2
    mlp_ratio: float = 2.0
    st_embed_dim: int = 32
    st_depth: int = 2
    st_heads: tuple = (2, 2, 4, 4)
    state_embed_dim: int = 32
    state_depth: int = 2
    state_heads: tuple = (2, 2, 4, 4)
    decoder_channels: tuple = (96, 48, 32, 16, 12)
    pose_channels: tuple = (16, 32, 64, 96, 128)
    pose_scale: float = 0.01
    context_length: int = 4
    targets: tuple = (0, 1, 3, 5)
    share_state_predictor: bool = True

    def validate(self):
        if self.targets != tuple(sorted(self.targets)) or self.targets[0] != 0:
            raise ValueError(f"targets must be sorted starting at 0, got {self.targets}")
        for dim_name, dim in (("height", self.image_height), ("width", self.image_width)):
            if dim % (self.patch_size * 8):
                raise ValueError(f"image {dim_name} {dim} must be divisible by "
                                 f"{self.patch_size * 8} (patch embed + 3 mergings)")
        if len(self.stage_depths) != 4 or len(self.stage_channels) != 4:
            raise ValueError("exactly 4 backbone stages are supported")

    def scale_sizes(self):
        h0 = self.image_height // self.patch_size
        w0 = self.image_width // self.patch_size
        return [(h0 >> i, w0 >> i) for i in range(4)]


def desk_config(**overrides) -> NetworkConfig:
    """Default desk-scale model (64x96 inputs)."""
    return replace(NetworkConfig(), **overrides)


def paper_config(**overrides) -> NetworkConfig:
    """Full-scale preset (192x640 inputs, swin-tiny sized); kept for reference."""
    base = NetworkConfig(
        image_height=192, image_width=640, patch_size=4,
        stage_depths=(2, 2, 6, 2), stage_channels=(96, 192, 384, 768),
        stage_heads=(3, 6, 12, 24), window_size=7,
        mlp_ratio=4.0, st_embed_dim=96, st_heads=(3, 6, 12, 24),
        state_embed_dim=96, state_heads=(3, 6, 12, 24),
        decoder_channels=(256, 128, 64, 32, 16),
        pose_channels=(16, 32, 64, 128, 256),
    )
    return replace(base, **overrides)


# -- window attention plumbing --------------------------------------------------

_MASK_CACHE = {}


def _window_mask(h, w, wh, ww, sh, sw, t):
    """Additive attention mask (n_windows, N, N) or None when nothing to mask.

    Region ids live on the rolled, padded canvas: cells wrapped by the cyclic
    shift get a distinct id per axis and padding gets a sentinel, so tokens
    attend only within their contiguous unpadded region. Padded query rows
    still see themselves, keeping softmax well-defined.
    """
    key = (h, w, wh, ww, sh, sw, t)
    if key in _MASK_CACHE:
        return _MASK_CACHE[key]
    hp = -(-h // wh) * wh
    wp = -(-w // ww) * ww
    if (hp, wp) == (h, w) and sh == 0 and sw == 0:
        _MASK_CACHE[key] = None
        return None

    def axis_ids(n, npad, shift):
        orig = (np.arange(npad) + shift) % npad         # source index after the roll
        ids = (np.arange(npad) + shift < npad).astype(np.int64)  # 1 contiguous, 0 wrapped
        return np.where(orig < n, ids, -3)              # padding sentinel

    row = axis_ids(h, hp, sh)
    col = axis_ids(w, wp, sw)
    cell = row[:, None] * 5 + col[None, :]
    cell = np.where((row[:, None] == -3) | (col[None, :] == -3), -99, cell)
    windows = cell.reshape(hp // wh, wh, wp // ww, ww).transpose(0, 2, 1, 3).reshape(-1, wh * ww)
    windows = np.tile(windows, (1, t))                  # temporal axis is window-global
    mask = np.where(windows[:, :, None] == windows[:, None, :], 0.0, -1e9).astype(np.float32)
    _MASK_CACHE[key] = mask
    return mask


def _relative_index(wh, ww):
    coords = np.stack(np.meshgrid(np.arange(wh), np.arange(ww), indexing="ij"), 0).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel[0] += wh - 1
    rel[1] += ww - 1
    return rel[0] * (2 * ww - 1) + rel[1]


class SwinBlock(nn.Module):
    """Pre-norm window attention + MLP; optionally cyclic-shifted windows.

    Works on token grids (B, T*H*W, C); T > 1 makes the window span all
    frames (full temporal attention within each spatial window).
    """

    def __init__(self, dim, heads, window, shifted, rng, t_frames=1, mlp_ratio=2.0,
                 rel_bias=True):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.window = window
        self.shift = window // 2 if shifted else 0
        self.t_frames = t_frames
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim, rng)
        self.proj = nn.Linear(dim, dim, rng)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)
        self.scale = (dim // heads) ** -0.5
        if rel_bias and t_frames == 1:
            n_rel = (2 * window - 1) ** 2
            self.rel_bias = nn.Parameter(rng.normal(0.0, 0.02, (n_rel, heads)).astype(np.float32))
            self._rel_idx = _relative_index(window, window).ravel()
        else:
            self.rel_bias = None
            self._rel_idx = None

    def _attention(self, tokens, batch, n_windows):
        bnw, n, c = tokens.shape
        qkv = self.qkv(tokens).reshape(bnw, n, 3, self.heads, c // self.heads)
        qkv = qkv.transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = T.matmul(q, k.transpose(0, 1, 3, 2)) * np.float32(self.scale)
        if self.rel_bias is not None:
            bias = T.take(self.rel_bias, self._rel_idx).reshape(n, n, self.heads)
            attn = attn + bias.transpose(2, 0, 1)
        mask = self._mask
        if mask is not None:
            attn = attn.reshape(batch, n_windows, self.heads, n, n) + Tensor(mask[:, None])
            attn = attn.reshape(bnw, self.heads, n, n)
        attn = T.softmax(attn, axis=-1)
        out = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(bnw, n, c)
        return self.proj(out)

    def forward(self, x, dims):
        t, h, w = dims
        b = x.shape[0]
        c = self.dim
        wh = ww = self.window
        hp = -(-h // wh) * wh
        wp = -(-w // ww) * ww
        self._mask = _window_mask(h, w, wh, ww, self.shift, self.shift, t)

        y = self.norm1(x).reshape(b, t, h, w, c)
        if wp != w:
            y = T.concat([y, Tensor(np.zeros((b, t, h, wp - w, c), np.float32))], axis=3)
        if hp != h:
            y = T.concat([y, Tensor(np.zeros((b, t, hp - h, wp, c), np.float32))], axis=2)
        if self.shift:
            y = y.roll((-self.shift, -self.shift), (2, 3))
        nwh, nww = hp // wh, wp // ww
        y = y.reshape(b, t, nwh, wh, nww, ww, c).transpose(0, 2, 4, 1, 3, 5, 6)
        y = y.reshape(b * nwh * nww, t * wh * ww, c)

        y = self._attention(y, b, nwh * nww)

        y = y.reshape(b, nwh, nww, t, wh, ww, c).transpose(0, 3, 1, 4, 2, 5, 6)
        y = y.reshape(b, t, hp, wp, c)
        if self.shift:
            y = y.roll((self.shift, self.shift), (2, 3))
        if (hp, wp) != (h, w):
            y = y[:, :, :h, :w, :]
        x = x + y.reshape(b, t * h * w, c)
        x = x + self.fc2(T.gelu(self.fc1(self.norm2(x))))
        return x


class PatchEmbed(nn.Module):
    def __init__(self, cfg, rng):
        self.conv = nn.Conv2d(3, cfg.stage_channels[0], cfg.patch_size, rng,
                              stride=cfg.patch_size)
        self.norm = nn.LayerNorm(cfg.stage_channels[0])

    def forward(self, img):
        fmap = self.conv(img)
        b, c, h, w = fmap.shape
        tokens = fmap.reshape(b, c, h * w).transpose(0, 2, 1)
        return self.norm(tokens), (h, w)


class PatchMerging(nn.Module):
    def __init__(self, dim, rng):
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim, rng, bias=False)
        self.dim = dim

    def forward(self, x, hw):
        h, w = hw
        b = x.shape[0]
        y = x.reshape(b, h, w, self.dim)
        parts = [y[:, 0::2, 0::2], y[:, 1::2, 0::2], y[:, 0::2, 1::2], y[:, 1::2, 1::2]]
        y = T.concat(parts, axis=-1).reshape(b, (h // 2) * (w // 2), 4 * self.dim)
        return self.reduce(self.norm(y)), (h // 2, w // 2)


def _tokens_to_map(tokens, hw):
    h, w = hw
    b, _, c = tokens.shape
    return tokens.transpose(0, 2, 1).reshape(b, c, h, w)


def _map_to_tokens(fmap):
    b, c, h, w = fmap.shape
    return fmap.reshape(b, c, h * w).transpose(0, 2, 1)


class Backbone(nn.Module):
    """Shared per-frame encoder: patch embed, four window-attention stages,
    features tapped before each downsampling."""

    def __init__(self, cfg, rng):
        self.patch_embed = PatchEmbed(cfg, rng)
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i in range(4):
            blocks = nn.ModuleList([
                SwinBlock(cfg.stage_channels[i], cfg.stage_heads[i], cfg.window_size,
                          shifted=(j % 2 == 1), rng=rng, mlp_ratio=cfg.mlp_ratio)
                for j in range(cfg.stage_depths[i])
            ])
            self.stages.append(blocks)
            if i < 3:
                self.merges.append(PatchMerging(cfg.stage_channels[i], rng))

    def forward(self, img):
        x, hw = self.patch_embed(T.as_tensor(img))
        pyramid = []
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x, (1, *hw))
            pyramid.append(_tokens_to_map(x, hw))
            if i < 3:
                x, hw = self.merges[i](x, hw)
        return pyramid


class STScaleFuser(nn.Module):
    """Fuses the four per-frame maps of one scale into a single state map.

    1x1-projects each frame to the fusion width, adds learned frame and
    spatial position embeddings, runs windowed attention over the joint
    token sequence, then concatenates the most recent frame's slice with its
    original features and projects back to the scale's channel count.
    """

    def __init__(self, channels, embed, heads, window, depth, n_frames, hw, rng,
                 mlp_ratio=2.0):
        self.n_frames = n_frames
        self.hw = hw
        self.embed = embed
        self.proj_in = nn.Conv2d(channels, embed, 1, rng)
        self.pos_frame = nn.Parameter(rng.normal(0.0, 0.02, (n_frames, 1, embed)).astype(np.float32))
        self.pos_spatial = nn.Parameter(rng.normal(0.0, 0.02, (1, hw[0] * hw[1], embed)).astype(np.float32))
        self.blocks = nn.ModuleList([
            SwinBlock(embed, heads, window, shifted=(j % 2 == 1), rng=rng,
                      t_frames=n_frames, mlp_ratio=mlp_ratio, rel_bias=False)
            for j in range(depth)
        ])
        self.proj_out = nn.Conv2d(embed + channels, channels, 1, rng)

    def forward(self, frame_maps):
        if len(frame_maps) != self.n_frames:
            raise ValueError(f"st fuser expects {self.n_frames} frames, got {len(frame_maps)}")
        h, w = self.hw
        b = frame_maps[0].shape[0]
        toks = [_map_to_tokens(self.proj_in(m)) for m in frame_maps]   # each (B, N, E)
        x = T.stack(toks, axis=1)                                      # (B, T, N, E)
        x = x + self.pos_frame + self.pos_spatial
        x = x.reshape(b, self.n_frames * h * w, self.embed)
        for blk in self.blocks:
            x = blk(x, (self.n_frames, h, w))
        current = x.reshape(b, self.n_frames, h * w, self.embed)[:, -1]
        fused = T.concat([_tokens_to_map(current, self.hw), frame_maps[-1]], axis=1)
        return self.proj_out(fused)


class StateScalePredictor(nn.Module):
    """One scale of the recursive state transition F_{k+1} = f(F_k)."""

    def __init__(self, channels, embed, heads, window, depth, hw, rng, mlp_ratio=2.0):
        self.hw = hw
        self.embed = embed
        self.proj_in = nn.Conv2d(channels, embed, 1, rng)
        self.pos_spatial = nn.Parameter(rng.normal(0.0, 0.02, (1, hw[0] * hw[1], embed)).astype(np.float32))
        self.blocks = nn.ModuleList([
            SwinBlock(embed, heads, window, shifted=(j % 2 == 1), rng=rng,
                      mlp_ratio=mlp_ratio, rel_bias=False)
            for j in range(depth)
        ])
        self.proj_out = nn.Conv2d(embed + channels, channels, 1, rng)

    def forward(self, fmap):
        h, w = self.hw
        x = _map_to_tokens(self.proj_in(fmap)) + self.pos_spatial
        for blk in self.blocks:
            x = blk(x, (1, h, w))
        y = T.concat([_tokens_to_map(x, self.hw), fmap], axis=1)
        return self.proj_out(y)


class StatePredictor(nn.Module):
    """Advances a fused pyramid one future frame per application."""

    def __init__(self, cfg, rng):
        sizes = cfg.scale_sizes()
        self.scales = nn.ModuleList([
            StateScalePredictor(cfg.stage_channels[i], cfg.state_embed_dim,
                                cfg.state_heads[i], cfg.window_size, cfg.state_depth,
                                sizes[i], rng, cfg.mlp_ratio)
            for i in range(4)
        ])

    def forward(self, pyramid):
        return [scale(fmap) for scale, fmap in zip(self.scales, pyramid)]


class _UpBlock(nn.Module):
    def __init__(self, c_in, c_out, rng):
        self.conv = nn.ConvTranspose2d(c_in, c_out, 3, rng, stride=1, padding=1)

    def forward(self, x):
        return T.relu(self.conv(x))


class DepthDecoder(nn.Module):
    """Shared decoder: transposed 3x3 convolutions with ReLU, bilinear
    upsampling between levels, encoder skip connections, sigmoid heads at
    strides 8, 4, 2, 1 (full resolution first in the output list)."""

    def __init__(self, cfg, rng):
        d16, d8, d4, d2, d1 = cfg.decoder_channels
        c4, c8, c16, c32 = cfg.stage_channels
        self.pre16 = _UpBlock(c32, d16, rng)
        self.post16 = _UpBlock(d16 + c16, d16, rng)
        self.pre8 = _UpBlock(d16, d8, rng)
        self.post8 = _UpBlock(d8 + c8, d8, rng)
        self.pre4 = _UpBlock(d8, d4, rng)
        self.post4 = _UpBlock(d4 + c4, d4, rng)
        self.pre2 = _UpBlock(d4, d2, rng)
        self.post2 = _UpBlock(d2, d2, rng)
        self.pre1 = _UpBlock(d2, d1, rng)
        self.post1 = _UpBlock(d1, d1, rng)
        self.head8 = nn.ConvTranspose2d(d8, 1, 3, rng, stride=1, padding=1)
        self.head4 = nn.ConvTranspose2d(d4, 1, 3, rng, stride=1, padding=1)
        self.head2 = nn.ConvTranspose2d(d2, 1, 3, rng, stride=1, padding=1)
        self.head1 = nn.ConvTranspose2d(d1, 1, 3, rng, stride=1, padding=1)
        for head in (self.head8, self.head4, self.head2, self.head1):
            # start with the sigmoid unsaturated and biased toward far depth:
            # a mid-range start would project most pixels out of frame and
            # the auto-mask would starve the photometric gradient
            head.weight.data = rng.normal(0.0, 0.01, head.weight.data.shape).astype(np.float32)
            head.bias.data = np.full(1, -4.0, dtype=np.float32)

    @staticmethod
    def _up(x):
        return T.upsample_bilinear(x, x.shape[2] * 2, x.shape[3] * 2)

    def forward(self, pyramid):
        p4, p8, p16, p32 = pyramid
        x = self.post16(T.concat([self._up(self.pre16(p32)), p16], axis=1))
        x = self.post8(T.concat([self._up(self.pre8(x)), p8], axis=1))
        disp8 = T.sigmoid(self.head8(x))
        x = self.post4(T.concat([self._up(self.pre4(x)), p4], axis=1))
        disp4 = T.sigmoid(self.head4(x))
        x = self.post2(self._up(self.pre2(x)))
        disp2 = T.sigmoid(self.head2(x))
        x = self.post1(self._up(self.pre1(x)))
        disp1 = T.sigmoid(self.head1(x))
        return [disp1, disp2, disp4, disp8]


@dataclass
class DepthSequenceOutput:
    """Sigmoid disparity maps: one list of 4 scales (full res first) per target."""
    disparities: dict

    def targets(self):
        return sorted(self.disparities)


class DepthNet(nn.Module):
    def __init__(self, cfg: NetworkConfig, rng):
        cfg.validate()
        self.cfg = cfg
        sizes = cfg.scale_sizes()
        self.backbone = Backbone(cfg, rng)
        self.st_fusers = nn.ModuleList([
            STScaleFuser(cfg.stage_channels[i], cfg.st_embed_dim, cfg.st_heads[i],
                         cfg.window_size, cfg.st_depth, cfg.context_length,
                         sizes[i], rng, cfg.mlp_ratio)
            for i in range(4)
        ])
        n_steps = max(cfg.targets)
        if cfg.share_state_predictor:
            self.predictors = nn.ModuleList([StatePredictor(cfg, rng)])
        else:
            self.predictors = nn.ModuleList([StatePredictor(cfg, rng) for _ in range(n_steps)])
        self.decoder = DepthDecoder(cfg, rng)

    def _predictor(self, step):
        return self.predictors[0] if self.cfg.share_state_predictor else self.predictors[step - 1]

    def forward(self, context, detach_context=True) -> DepthSequenceOutput:
        """context: (B, k, 3, H, W) array of the k past frames, oldest first."""
        context = np.asarray(context, dtype=np.float32)
        if context.ndim != 5 or context.shape[1] != self.cfg.context_length:
            raise ValueError(f"expected (B, {self.cfg.context_length}, 3, H, W) context, "
                             f"got {context.shape}")
        if context.shape[3] != self.cfg.image_height or context.shape[4] != self.cfg.image_width:
            raise ValueError(f"expected {self.cfg.image_height}x{self.cfg.image_width} frames, "
                             f"got {context.shape[3]}x{context.shape[4]}")
        k = self.cfg.context_length
        pyramids = []
        for i in range(k):
            if detach_context and i < k - 1:
                with T.no_grad():
                    pyramids.append(self.backbone(context[:, i]))
            else:
                pyramids.append(self.backbone(context[:, i]))

        fused = [fuser([pyr[s] for pyr in pyramids])
                 for s, fuser in enumerate(self.st_fusers)]
        outputs = {}
        if 0 in self.cfg.targets:
            outputs[0] = self.decoder(fused)
        state = fused
        for step in range(1, max(self.cfg.targets) + 1):
            state = self._predictor(step)(state)
            if step in self.cfg.targets:
                outputs[step] = self.decoder(state)
        return DepthSequenceOutput(outputs)


class PoseNet(nn.Module):
    """Triplet of frames in, two relative poses out (frame-to-frame steps).

    Outputs (previous -> target, target -> next); each pose comes from a
    scaled axis-angle + translation head on a strided conv encoder.
    """

    def __init__(self, cfg: NetworkConfig, rng):
        self.cfg = cfg
        chans = (9,) + tuple(cfg.pose_channels)
        self.convs = nn.ModuleList([
            nn.Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, padding=1)
            for i in range(len(cfg.pose_channels))
        ])
        self.mix = nn.Conv2d(chans[-1], chans[-1], 3, rng, stride=1, padding=1)
        # small but nonzero: exactly-identity poses would make warped frames
        # equal the unwarped ones, the strict auto-mask would zero every
        # pixel, and no photometric gradient could ever reach this network
        self.head = nn.Linear(chans[-1], 12, rng, std=0.05)

    def forward(self, triplet):
        """triplet: (B, 3, 3, H, W) array (prev, target, next), channel-stacked."""
        triplet = np.asarray(triplet, dtype=np.float32)
        if triplet.ndim != 5 or triplet.shape[1] != 3:
            raise ValueError(f"pose net expects (B, 3, 3, H, W), got {triplet.shape}")
        b = triplet.shape[0]
        x = Tensor(triplet.reshape(b, 9, *triplet.shape[3:]))
        for conv in self.convs:
            x = T.relu(conv(x))
        x = T.relu(self.mix(x))
        x = x.mean(axis=(2, 3))
        out = self.head(x) * np.float32(self.cfg.pose_scale)
        rot_prev = axis_angle_to_matrix(out[:, 0:3])
        t_prev = out[:, 3:6]
        rot_next = axis_angle_to_matrix(out[:, 6:9])
        t_next = out[:, 9:12]
        return Pose(rot_prev, t_prev), Pose(rot_next, t_next)


class DepthForecastModel(nn.Module):
    """Depth net + pose net under one parameter namespace for checkpoints."""

    def __init__(self, cfg: NetworkConfig, rng):
        self.depth_net = DepthNet(cfg, rng)
        self.pose_net = PoseNet(cfg, rng)
        self.cfg = cfg


def build_model(cfg: NetworkConfig, seed: int) -> DepthForecastModel:
    return DepthForecastModel(cfg, np.random.default_rng(seed))
