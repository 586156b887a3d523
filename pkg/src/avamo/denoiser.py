"""Sequence denoiser with gated two-branch instruction conditioning.

Every block runs, in order: self attention, a gated cross attention for
the branch matching the task (the other branch is skipped entirely and
receives no gradient), keyframe cross attention, a depthwise temporal
convolution module, and a feed-forward module. All sublayers are
pre-norm residual.

Each text cross attention output passes through a zero-initialized 1-D
convolution whose kernel slides along the hidden axis. At initialization
its weight and bias are exactly zero, so instruction content cannot
perturb the motion pathway until training has produced a reason to
listen; a freshly initialized model is bit-for-bit identical to its
unconditional self.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    Tensor,
    as_tensor,
    constant,
    depthwise_conv_time,
    conv_hidden,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    reshape,
    softmax,
    tmean,
    transpose,
)
from .conditioning import AdapterPair, AdapterParams, InstructionRep
from .core import MotionSequence, PoseSequence, TaskKind, N_ACTION_UNITS
from .errors import ConfigError, DimensionError, InputError, RoutingError, ValidationError

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class DenoiserConfig:
    d_mot: int = 768
    d_aud: int = 768
    d_txt: int = 768
    d_pose: int = 6
    d_hidden: int = 768
    n_blocks: int = 12
    n_heads: int = 8
    conv_kernel: int = 5
    gate_kernel: int = 3
    ffn_mult: int = 4
    n_aus: int = N_ACTION_UNITS
    n_intensities: int = 3

    def __post_init__(self):
        for name in ("d_mot", "d_aud", "d_txt", "d_pose", "d_hidden", "n_blocks",
                     "n_heads", "conv_kernel", "gate_kernel", "ffn_mult",
                     "n_aus", "n_intensities"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.d_hidden % self.n_heads != 0:
            raise ConfigError(
                f"d_hidden ({self.d_hidden}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.conv_kernel % 2 == 0 or self.gate_kernel % 2 == 0:
            raise ConfigError("convolution kernels must be odd")
        if self.d_txt < 5:
            raise ConfigError("d_txt must be >= 5 (adapter bottleneck is d_txt - 4)")

    @property
    def adapter_hidden(self) -> int:
        return self.d_txt - 4


def _param_specs(cfg: DenoiserConfig):
    """Yield (name, shape, init kind) in a fixed order.

    The order doubles as the RNG draw order, so parameter values are a
    pure function of (config, seed).
    """
    dh, dm, dt = cfg.d_hidden, cfg.d_mot, cfg.d_txt

    def linear(name, fan_in, fan_out):
        yield f"{name}.w", (fan_in, fan_out), "glorot"
        yield f"{name}.b", (fan_out,), "zeros"

    def lnorm(name, d):
        yield f"{name}.g", (d,), "ones"
        yield f"{name}.b", (d,), "zeros"

    yield from linear("input_proj", dm, dh)
    yield from linear("audio_proj", cfg.d_aud, dm)
    yield from linear("kf_proj", dm, dh)
    yield from linear("time_mlp1", dh, dh)
    yield from linear("time_mlp2", dh, dh)
    for branch in ("adapter_emotion", "adapter_motion"):
        yield f"{branch}.w1", (dt, cfg.adapter_hidden), "glorot"
        yield f"{branch}.b1", (cfg.adapter_hidden,), "zeros"
        yield f"{branch}.w2", (cfg.adapter_hidden, dt), "glorot"
        yield f"{branch}.b2", (dt,), "zeros"
    for i in range(cfg.n_blocks):
        pre = f"blocks.{i}."
        yield from lnorm(pre + "self_ln", dh)
        for part in ("q", "k", "v"):
            yield from linear(pre + "self_" + part, dh, dh)
        yield from linear(pre + "self_o", dh, dh)
        for branch in ("emo", "mot"):
            yield from lnorm(pre + branch + "_ln", dh)
            yield from linear(pre + branch + "_q", dh, dh)
            yield from linear(pre + branch + "_k", dt, dh)
            yield from linear(pre + branch + "_v", dt, dh)
            yield from linear(pre + branch + "_o", dh, dh)
            yield pre + branch + "_gate.w", (cfg.gate_kernel,), "zeros"
            yield pre + branch + "_gate.b", (), "zeros"
        yield from lnorm(pre + "key_ln", dh)
        for part in ("q", "k", "v", "o"):
            yield from linear(pre + "key_" + part, dh, dh)
        yield from lnorm(pre + "conv_ln", dh)
        yield from linear(pre + "conv_pw1", dh, dh)
        yield pre + "conv_dw.w", (cfg.conv_kernel, dh), "conv"
        yield pre + "conv_dw.b", (dh,), "zeros"
        yield from linear(pre + "conv_pw2", dh, dh)
        yield from lnorm(pre + "ffn_ln", dh)
        yield from linear(pre + "ffn_in", dh, cfg.ffn_mult * dh)
        yield from linear(pre + "ffn_out", cfg.ffn_mult * dh, dh)
    yield from lnorm("final_ln", dh)
    yield from linear("head_motion", dh, dm)
    yield from linear("head_pose", dh, cfg.d_pose)
    yield from linear("head_au1", dh, dh)
    yield from linear("head_au2", dh, cfg.n_aus)
    yield from linear("head_int1", dh, dh)
    yield from linear("head_int2", dh, cfg.n_intensities)


def param_names(cfg: DenoiserConfig) -> list[str]:
    return [name for name, _, _ in _param_specs(cfg)]


def gate_param_names(cfg: DenoiserConfig) -> list[str]:
    return [n for n in param_names(cfg) if "_gate." in n]


def init_params(cfg: DenoiserConfig, seed: int) -> dict[str, Tensor]:
    """Materialize all parameters; gates start at exactly zero."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, kind in _param_specs(cfg):
        if kind == "glorot":
            std = np.sqrt(2.0 / (shape[0] + shape[1]))
            arr = rng.standard_normal(shape) * std
        elif kind == "conv":
            std = np.sqrt(2.0 / (shape[0] + 1))
            arr = rng.standard_normal(shape) * std
        elif kind == "ones":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr, requires_grad=True)
    return params


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of a scalar diffusion step."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = float(t) * freqs
    emb = np.zeros(dim)
    emb[:half] = np.sin(ang)
    emb[half : 2 * half] = np.cos(ang)
    return emb


def frame_positions(n_frames: int, dim: int) -> np.ndarray:
    """Sinusoidal frame-index encodings [n_frames x dim]."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    ang = np.arange(n_frames)[:, None] * freqs[None, :]
    out = np.zeros((n_frames, dim))
    out[:, :half] = np.sin(ang)
    out[:, half : 2 * half] = np.cos(ang)
    return out


def _attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Multi-head scaled dot product attention over [rows x d_hidden]."""
    lq, d = q.shape
    lk = k.shape[0]
    dh = d // n_heads
    q3 = transpose(reshape(q, (lq, n_heads, dh)), (1, 0, 2))
    k3 = transpose(reshape(k, (lk, n_heads, dh)), (1, 2, 0))
    v3 = transpose(reshape(v, (lk, n_heads, dh)), (1, 0, 2))
    att = softmax(matmul(q3, k3) * (1.0 / np.sqrt(dh)))
    out = matmul(att, v3)
    return reshape(transpose(out, (1, 0, 2)), (lq, d))


def _mha(q_in: Tensor, kv_in: Tensor, p: dict, prefix: str, n_heads: int) -> Tensor:
    q = matmul(q_in, p[f"{prefix}_q.w"]) + p[f"{prefix}_q.b"]
    k = matmul(kv_in, p[f"{prefix}_k.w"]) + p[f"{prefix}_k.b"]
    v = matmul(kv_in, p[f"{prefix}_v.w"]) + p[f"{prefix}_v.b"]
    out = _attention(q, k, v, n_heads)
    return matmul(out, p[f"{prefix}_o.w"]) + p[f"{prefix}_o.b"]


def gated_text_attention(
    h: Tensor, rep, p: dict, prefix: str, n_heads: int
) -> Tensor:
    """h + ZeroConv(CrossAttn(LN(h), rep)).

    With a zero gate this returns h unchanged, bit for bit, whatever the
    rep contains. The gate is linear in its parameters: doubling both
    gate weight and bias doubles (output - h).
    """
    vectors = rep.vectors if isinstance(rep, InstructionRep) else as_tensor(rep)
    x = layer_norm(h, p[f"{prefix}_ln.g"], p[f"{prefix}_ln.b"])
    attn = _mha(x, vectors, p, prefix, n_heads)
    gated = conv_hidden(attn, p[f"{prefix}_gate.w"], p[f"{prefix}_gate.b"])
    return h + gated


@dataclass
class PredictionBundle:
    """Denoiser outputs for one clip at one diffusion step."""

    m0_hat: MotionSequence
    pose: PoseSequence
    au_logits: np.ndarray  # [n_aus]
    intensity_logits: np.ndarray  # [n_intensities]


class Denoiser:
    """Parameter container plus the forward pass."""

    def __init__(self, config: DenoiserConfig, params: dict[str, Tensor]):
        expected = param_names(config)
        missing = [n for n in expected if n not in params]
        extra = [n for n in params if n not in set(expected)]
        if missing or extra:
            raise ValidationError(
                f"parameter set mismatch: missing={missing[:5]} extra={extra[:5]}"
            )
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: DenoiserConfig, seed: int) -> "Denoiser":
        return cls(config, init_params(config, seed))

    def adapters(self) -> AdapterPair:
        return AdapterPair(
            emotion=AdapterParams.from_params(self.params, "adapter_emotion"),
            motion=AdapterParams.from_params(self.params, "adapter_motion"),
        )

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def audio_projection(self) -> tuple[Tensor, Tensor]:
        return self.params["audio_proj.w"], self.params["audio_proj.b"]

    # -- forward ---------------------------------------------------------
    def forward(self, m_t_a, t: int, rep: InstructionRep, keyframe, task) -> dict:
        """Graph-building forward pass; returns a dict of output Tensors."""
        cfg, p = self.config, self.params
        task = TaskKind(task)
        if rep.branch != task:
            raise RoutingError(
                f"rep was encoded for {rep.branch}, denoiser asked to run {task}"
            )
        t = int(t)
        if t < 0:
            raise InputError(f"timestep must be >= 0, got {t}")
        m = as_tensor(m_t_a)
        if m.ndim != 2 or m.shape[1] != cfg.d_mot:
            raise DimensionError(
                f"m_t_a must be [frames x {cfg.d_mot}], got {m.shape}"
            )
        kf = as_tensor(keyframe)
        if kf.shape != (1, cfg.d_mot):
            raise DimensionError(f"keyframe must be [1 x {cfg.d_mot}], got {kf.shape}")
        if rep.vectors.shape[1] != cfg.d_txt:
            raise DimensionError(
                f"rep width {rep.vectors.shape[1]} != d_txt {cfg.d_txt}"
            )
        if task == TaskKind.EMOTION_TALK and rep.k != 1:
            raise RoutingError(f"emotion branch expects k == 1, got k == {rep.k}")
        n_frames = m.shape[0]

        h = matmul(m, p["input_proj.w"]) + p["input_proj.b"]
        h = h + constant(frame_positions(n_frames, cfg.d_hidden))
        te = constant(timestep_embedding(t, cfg.d_hidden)[None, :])
        te = gelu(matmul(te, p["time_mlp1.w"]) + p["time_mlp1.b"])
        te = matmul(te, p["time_mlp2.w"]) + p["time_mlp2.b"]
        h = h + te
        kf_h = matmul(kf, p["kf_proj.w"]) + p["kf_proj.b"]

        branch = "emo" if task == TaskKind.EMOTION_TALK else "mot"
        for i in range(cfg.n_blocks):
            pre = f"blocks.{i}."
            x = layer_norm(h, p[pre + "self_ln.g"], p[pre + "self_ln.b"])
            h = h + _mha(x, x, p, pre + "self", cfg.n_heads)
            h = gated_text_attention(h, rep, p, pre + branch, cfg.n_heads)
            x = layer_norm(h, p[pre + "key_ln.g"], p[pre + "key_ln.b"])
            h = h + _mha(x, kf_h, p, pre + "key", cfg.n_heads)
            x = layer_norm(h, p[pre + "conv_ln.g"], p[pre + "conv_ln.b"])
            x = gelu(matmul(x, p[pre + "conv_pw1.w"]) + p[pre + "conv_pw1.b"])
            x = gelu(depthwise_conv_time(x, p[pre + "conv_dw.w"], p[pre + "conv_dw.b"]))
            h = h + (matmul(x, p[pre + "conv_pw2.w"]) + p[pre + "conv_pw2.b"])
            x = layer_norm(h, p[pre + "ffn_ln.g"], p[pre + "ffn_ln.b"])
            x = gelu(matmul(x, p[pre + "ffn_in.w"]) + p[pre + "ffn_in.b"])
            h = h + (matmul(x, p[pre + "ffn_out.w"]) + p[pre + "ffn_out.b"])

        hf = layer_norm(h, p["final_ln.g"], p["final_ln.b"])
        m0 = matmul(hf, p["head_motion.w"]) + p["head_motion.b"]
        pose = matmul(hf, p["head_pose.w"]) + p["head_pose.b"]
        pooled = tmean(hf, axis=0, keepdims=True)
        au = gelu(matmul(pooled, p["head_au1.w"]) + p["head_au1.b"])
        au = reshape(matmul(au, p["head_au2.w"]) + p["head_au2.b"], (cfg.n_aus,))
        inten = gelu(matmul(pooled, p["head_int1.w"]) + p["head_int1.b"])
        inten = reshape(
            matmul(inten, p["head_int2.w"]) + p["head_int2.b"], (cfg.n_intensities,)
        )
        return {"m0_hat": m0, "pose": pose, "au_logits": au, "intensity_logits": inten}

    def predict(
        self, m_t_a, t: int, rep: InstructionRep, keyframe, task,
        frame_rate: float = 25.0,
    ) -> PredictionBundle:
        """Inference forward pass returning plain arrays."""
        with no_grad():
            out = self.forward(m_t_a, t, rep, keyframe, task)
        return PredictionBundle(
            m0_hat=MotionSequence(out["m0_hat"].data, frame_rate),
            pose=PoseSequence(out["pose"].data),
            au_logits=out["au_logits"].data,
            intensity_logits=out["intensity_logits"].data,
        )

    # -- persistence -------------------------------------------------------
    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "format": CHECKPOINT_FORMAT,
            "config": asdict(self.config),
        }
        arrays = {name: t.data for name, t in self.params.items()}
        arrays["__header__"] = np.frombuffer(
            json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8
        )
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "Denoiser":
        path = Path(path)
        if not path.exists():
            raise InputError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as npz:
            if "__header__" not in npz:
                raise ValidationError(f"{path} is not a denoiser checkpoint")
            header = json.loads(bytes(npz["__header__"]).decode("utf-8"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ValidationError(
                    f"unsupported checkpoint format {header.get('format')!r}"
                )
            config = DenoiserConfig(**header["config"])
            params = {
                name: Tensor(npz[name], requires_grad=True)
                for name in npz.files
                if name != "__header__"
            }
        return cls(config, params)


def denoise(m_t_a, t: int, rep: InstructionRep, keyframe, task, model: Denoiser,
            frame_rate: float = 25.0) -> PredictionBundle:
    """Functional single-step denoiser call (inference)."""
    return model.predict(m_t_a, t, rep, keyframe, task, frame_rate)


def make_sampling_denoiser(model: Denoiser):
    """Adapt a Denoiser to the sampling-loop callable contract.

    The returned callable adds the bundle's projected audio term to the
    current state before the network sees it.
    """

    def fn(m_t: MotionSequence, t: int, cond) -> PredictionBundle:
        m_t_a = m_t.data + cond.audio
        return model.predict(
            m_t_a, t, cond.rep, cond.keyframe, cond.task, frame_rate=m_t.frame_rate
        )

    return fn
