"""Full audio-visual network and its ablation variants.

Wiring of the default variant::

    audio  -> Conformer x3 ----------------------------.  A
    frames -> Conformer x3 -> v -.                      |
                                 +-> OV fusion -> ov ---+-> IFE(ov <- A) -> max-pool -> video head
    flow   -> Conformer x2 -> o -'                      '-> IFE(A <- ov) -> max-pool -> audio head
                                                             [video : audio] pooled -> fusion head

The ``IFE-*`` variants share this architecture and differ only in the head
used at inference.  The ``IFE-V-*`` variants change the visual pathway, and
``None-IFE`` skips both cross-modal attention blocks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Rng, ShapeError, Tensor
from .data.features import read_checkpoint, write_checkpoint
from .fusion import IfeBlock, OvFusion, temporal_max_pool
from .nn import AttentionRecord, EncoderStack, Linear, MLPHead, Module

VARIANTS = (
    "IFE-Video", "IFE-Audio", "IFE-Fusion", "None-IFE",
    "IFE-V-O", "IFE-V-F", "IFE-V-FOSC", "IFE-V-FODC", "IFE-V-FODS",
    "IFE-V-Early", "IFE-V-Trans",
)
HEADS = ("fusion", "video", "audio")  # also the tie-break order of select_head

# visual pathway per variant
_VISUAL = {
    "IFE-Video": "pae", "IFE-Audio": "pae", "IFE-Fusion": "pae", "None-IFE": "pae",
    "IFE-V-Trans": "pae", "IFE-V-O": "flow", "IFE-V-F": "rgb",
    "IFE-V-FOSC": "fosc", "IFE-V-FODC": "fodc", "IFE-V-FODS": "fods", "IFE-V-Early": "early",
}


def inference_head(variant: str) -> str:
    """Head a variant reports at test time."""
    return {"IFE-Audio": "audio", "IFE-Fusion": "fusion"}.get(variant, "video")


@dataclass
class ModelConfig:
    variant: str = "IFE-Video"
    dim: int = 64
    heads: int = 4
    blocks: tuple = (3, 3, 2)          # audio, video, flow
    task: str = "discrete"
    num_classes: int = 4
    input_dims: tuple = (16, 16, 16)   # audio, video, flow
    kernel: int = 3
    temperature: bool = False
    expansion: int = 4
    head_hidden: int = 64
    dropout: float = 0.0
    positional: bool = False

    def __post_init__(self):
        self.blocks = tuple(int(b) for b in self.blocks)
        self.input_dims = tuple(int(d) for d in self.input_dims)

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        base = dict(dim=512, heads=8, kernel=7, head_hidden=512, num_classes=6,
                    input_dims=(1024, 1408, 1408))
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["blocks"] = list(self.blocks)
        out["input_dims"] = list(self.input_dims)
        return out

    @property
    def out_dim(self) -> int:
        return self.num_classes if self.task == "discrete" else 3

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.task not in ("discrete", "continuous"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.task == "discrete" and self.num_classes < 2:
            raise ValueError("discrete task needs at least 2 classes")
        if self.dim < 1 or self.dim % self.heads:
            raise ValueError(f"model dim {self.dim} must be a positive multiple of heads={self.heads}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"conv kernel must be odd, got {self.kernel}")
        if len(self.blocks) != 3 or min(self.blocks) < 0:
            raise ValueError(f"blocks must be three non-negative counts, got {self.blocks}")
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ValueError(f"input_dims must be three positive sizes, got {self.input_dims}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        mode = _VISUAL[self.variant]
        if mode in ("fosc", "fodc", "fods") and self.input_dims[1] != self.input_dims[2]:
            raise ValueError(
                f"{self.variant} merges flow and frame features before one encoder and needs equal "
                f"dims, got video {self.input_dims[1]} vs flow {self.input_dims[2]}"
            )


@dataclass
class ForwardOutput:
    heads: dict[str, Tensor]
    records: dict[str, AttentionRecord] = field(default_factory=dict)


class DeIiiModel(Module):
    def __init__(self, cfg: ModelConfig, rng: Rng):
        cfg.validate()
        self.cfg = cfg
        d = cfg.dim
        d_a, d_v, d_o = cfg.input_dims
        n_a, n_v, n_o = cfg.blocks
        self.visual_mode = _VISUAL[cfg.variant]
        kind = "transformer" if cfg.variant == "IFE-V-Trans" else "conformer"

        def stack(name, d_in, n, width=d, k="conformer"):
            return EncoderStack(d_in, width, n, cfg.heads, cfg.kernel, rng.child(name), kind=k,
                                expansion=cfg.expansion, dropout=cfg.dropout,
                                positional=cfg.positional)

        self.audio_stack = stack("audio_stack", d_a, n_a)
        self.video_stack = self.flow_stack = self.visual_stack = None
        self.ov = None
        self.early_video = self.early_flow = None
        mode = self.visual_mode
        if mode == "pae":
            self.video_stack = stack("video_stack", d_v, n_v, k=kind)
            self.flow_stack = stack("flow_stack", d_o, n_o, k=kind)
        elif mode == "rgb":
            self.video_stack = stack("video_stack", d_v, n_v)
        elif mode == "flow":
            self.flow_stack = stack("flow_stack", d_o, n_o)
        elif mode == "fodc":
            self.visual_stack = stack("visual_stack", 2 * d_v, n_v, width=2 * d)
        elif mode in ("fosc", "fods"):
            self.visual_stack = stack("visual_stack", d_v, n_v)
        elif mode == "early":
            self.early_video = Linear(d_v, d, rng.child("early_video"))
            self.early_flow = Linear(d_o, d, rng.child("early_flow"))
            self.visual_stack = stack("visual_stack", None, n_v)
        if mode not in ("rgb", "flow"):
            self.ov = OvFusion(d, rng.child("ov"))

        self.ife_video = self.ife_audio = None
        if cfg.variant != "None-IFE":
            self.ife_video = IfeBlock(d, rng.child("ife_video"), "video", "audio",
                                      cfg.expansion, cfg.temperature)
            self.ife_audio = IfeBlock(d, rng.child("ife_audio"), "audio", "video",
                                      cfg.expansion, cfg.temperature)

        c = cfg.out_dim
        self.head_video = MLPHead(d, cfg.head_hidden, c, rng.child("head_video"))
        self.head_audio = MLPHead(d, cfg.head_hidden, c, rng.child("head_audio"))
        self.head_fusion = MLPHead(2 * d, cfg.head_hidden, c, rng.child("head_fusion"))

    def components(self) -> set[str]:
        names = ("audio_stack", "video_stack", "flow_stack", "visual_stack", "ov",
                 "early_video", "early_flow", "ife_video", "ife_audio",
                 "head_video", "head_audio", "head_fusion")
        return {n for n in names if getattr(self, n) is not None}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))[:5]
            extra = sorted(set(state) - set(own))[:5]
            raise ValueError(f"checkpoint does not match model: missing {missing}, unexpected {extra}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint entry {name} has shape {arr.shape}, model expects {p.shape}")
            p.value = arr.astype(p.dtype)

    # -- forward -------------------------------------------------------------
    def _visual(self, video: Tensor, flow: Tensor | None, records: dict, rng) -> Tensor:
        mode = self.visual_mode
        d = self.cfg.dim
        if mode in ("pae", "flow", "fosc", "fodc", "fods", "early") and flow is None:
            raise ShapeError(f"{self.cfg.variant} needs a flow stream")
        if mode == "rgb":
            return self.video_stack(video, rng)
        if mode == "flow":
            return self.flow_stack(flow, rng)
        if mode == "pae":
            o_bar = self.flow_stack(flow, rng)
            v_bar = self.video_stack(video, rng)
        elif mode == "fosc":
            if flow.shape[1] != video.shape[1]:
                raise ShapeError(f"flow length {flow.shape[1]} != frame length {video.shape[1]}")
            n = video.shape[1]
            h = self.visual_stack(ad.concat([flow, video], axis=1), rng)
            o_bar, v_bar = h[:, :n, :], h[:, n:, :]
        elif mode == "fodc":
            h = self.visual_stack(ad.concat([flow, video], axis=-1), rng)
            o_bar, v_bar = h[..., :d], h[..., d:]
        elif mode == "fods":
            h = self.visual_stack(flow + video, rng)
            o_bar = v_bar = h
        else:  # early
            fused, rec = self.ov(self.early_flow(flow), self.early_video(video))
            records["ov"] = rec
            return self.visual_stack(fused, rng)
        fused, rec = self.ov(o_bar, v_bar)
        records["ov"] = rec
        return fused

    def __call__(self, audio, video, flow=None, rng: Rng | None = None,
                 bypass_ife: bool = False) -> ForwardOutput:
        dtype = self.head_video.fc1.weight.dtype
        audio = _input(audio, dtype, self.cfg.input_dims[0], "audio")
        video = _input(video, dtype, self.cfg.input_dims[1], "video")
        flow = None if flow is None else _input(flow, dtype, self.cfg.input_dims[2], "flow")
        records: dict[str, AttentionRecord] = {}
        a_bar = self.audio_stack(audio, rng)
        ov_bar = self._visual(video, flow, records, rng)
        if self.ife_video is None or bypass_ife:
            ov_dd, a_dd = ov_bar, a_bar
        else:
            ov_dd, records["video_query"] = self.ife_video(ov_bar, a_bar)
            a_dd, records["audio_query"] = self.ife_audio(a_bar, ov_bar)
        ov_star = temporal_max_pool(ov_dd)
        a_star = temporal_max_pool(a_dd)
        heads = {
            "video": self.head_video(ov_star),
            "audio": self.head_audio(a_star),
            "fusion": self.head_fusion(ad.concat([ov_star, a_star], axis=-1)),
        }
        return ForwardOutput(heads, records)


def _input(x, dtype, dim: int, name: str) -> Tensor:
    t = x if isinstance(x, Tensor) else ad.constant(np.asarray(x), dtype=dtype)
    if t.ndim == 2:
        t = ad.reshape(t, (1,) + t.shape)
    if t.ndim != 3 or t.shape[1] < 1:
        raise ShapeError(f"{name} input must be [B, T, D] with T >= 1, got {t.shape}")
    if t.shape[2] != dim:
        raise ShapeError(f"{name} input has feature dim {t.shape[2]}, config expects {dim}")
    return t


def build_model(cfg: ModelConfig, rng: Rng | int = 0) -> DeIiiModel:
    if not isinstance(rng, Rng):
        rng = Rng(rng)
    return DeIiiModel(cfg, rng)


def forward(model: DeIiiModel, batch, rng: Rng | None = None) -> ForwardOutput:
    return model(batch.audio, batch.video, batch.flow, rng=rng)


def save_checkpoint(model: DeIiiModel, path, extra: dict | None = None) -> None:
    echo = {"model": model.cfg.to_dict()}
    if extra:
        echo.update(extra)
    write_checkpoint(path, model.state_dict(), echo)


def load_checkpoint(path, cfg: ModelConfig | None = None) -> tuple[DeIiiModel, dict]:
    """Rebuild a model from a checkpoint.  If ``cfg`` is given it must match
    the checkpoint's config echo."""
    state, echo = read_checkpoint(path)
    saved = ModelConfig.from_dict(echo["model"])
    if cfg is not None and cfg.to_dict() != saved.to_dict():
        diff = {k: (v, saved.to_dict()[k]) for k, v in cfg.to_dict().items() if saved.to_dict()[k] != v}
        raise ValueError(f"checkpoint config mismatch (requested, saved): {diff}")
    dtype = next(iter(state.values())).dtype if state else np.float64
    with ad.precision("f32" if dtype == np.float32 else "f64"):
        model = build_model(saved, Rng(0))
    model.load_state_dict(state)
    return model, echo
