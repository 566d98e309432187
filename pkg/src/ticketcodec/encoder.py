"""Per-image encoding: two-stage optimisation, step search and bitstream emission."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .arm import as_float64, latent_rate_bits
from .coder.bitstream import CodecBitstream, Header
from .coder.latents import encode_latents, latent_bounds
from .coder.mask import encode_mask, mask_bits_model
from .coder.params import (
    STEP_EXPONENTS,
    compress_network_params,
    dequantize,
    flatten_params,
    param_bits_model,
    quantize_params,
    range_preamble_bits,
    search_quantization_steps,
    step_from_index,
    unflatten_params,
)
from .complexity import count_macs
from .fourier import FourierConfig
from .metrics import mse as mse_fn
from .metrics import psnr_from_mse, quantize_8bit
from .model import ArchConfig, CodecModel, Params
from .numcore import UnstableConfigurationError, derive_stream
from .quantnoise import (
    PlateauDecay,
    StageSchedule,
    hard_round,
    hard_round_surrogate_grad,
    kumaraswamy_noise,
    soft_round,
    soft_round_grad,
)
from .supermask import update_scores

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (2e-2, 1e-2, 5e-3, 1e-3, 5e-4, 2e-4)
MODE_CODES = {"full": 0, "modnet_only": 1, "dense_trained": 2}
DENSE_PREFIX_BYTES = 5


class EncoderDivergenceError(FloatingPointError):
    """Training produced a non-finite loss; ``state`` holds a diagnostic snapshot."""

    def __init__(self, msg: str, state: dict):
        super().__init__(msg)
        self.state = state


@dataclass(frozen=True)
class EncoderConfig:
    lam: float = 1e-3
    mask_ratio: float = 0.2
    d: int = 32
    c: int = 16
    n_residual: int = 0
    n_levels: int = 7
    hidden_dims: tuple = (32, 24, 16)
    phases: int = 32
    freqs: int = 64
    steps1: int = 100_000
    steps2: int = 10_000
    lr1: float = 1e-2
    lr2: float = 1e-4
    score_lr: float = 0.1
    seed: int = 0
    eval_interval: int = 100
    optimizer: str = "adam"
    score_optimizer: str = "sgd"
    step_exponents: tuple = STEP_EXPONENTS
    dump_dir: str | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.score_optimizer not in ("adam", "sgd"):
            raise ValueError(f"score_optimizer must be 'adam' or 'sgd', got {self.score_optimizer!r}")
        if self.steps1 < 1 or self.steps2 < 0:
            raise ValueError("need at least one Stage I step and a non-negative Stage II count")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be positive")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    def arch(self, mode: str = "full") -> ArchConfig:
        return ArchConfig(
            d=self.d, c=self.c, n_levels=self.n_levels, n_residual=self.n_residual,
            hidden_dims=tuple(self.hidden_dims),
            fourier=FourierConfig(self.phases, self.freqs),
            mask_ratio=self.mask_ratio, mode=mode,
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden_dims"] = list(self.hidden_dims)
        out["step_exponents"] = list(self.step_exponents)
        return out


@dataclass
class RDRecord:
    image: str
    mode: str
    height: int
    width: int
    lam: float
    mask_ratio: float
    seed: int
    d: int
    c: int
    n_residual: int
    steps1: int
    steps2: int
    bpp_total: float
    bpp_z: float
    bpp_tau: float
    bpp_theta: float
    bpp_psi: float
    bpp_weights: float
    bpp_header: float
    bits_model: float
    mse: float
    psnr: float
    rd_cost: float
    train_cost: float
    macs_lower: float
    macs_upper: float
    theta_step: int
    psi_step: int
    wall_time: float
    # Not part of the CSV schema.
    model_bits: dict = field(default_factory=dict, repr=False)
    history: list = field(default_factory=list, repr=False)
    reconstruction: np.ndarray | None = field(default=None, repr=False)

    CSV_FIELDS = (
        "image", "mode", "height", "width", "lam", "mask_ratio", "seed", "d", "c",
        "n_residual", "steps1", "steps2", "bpp_total", "bpp_z", "bpp_tau", "bpp_theta",
        "bpp_psi", "bpp_weights", "bpp_header", "bits_model", "mse", "psnr", "rd_cost",
        "train_cost", "macs_lower", "macs_upper", "theta_step", "psi_step", "wall_time",
    )

    def row(self) -> dict:
        return {k: getattr(self, k) for k in self.CSV_FIELDS}

    @property
    def component_bits(self) -> dict:
        hw = self.height * self.width
        return {k: getattr(self, f"bpp_{k}") * hw
                for k in ("z", "tau", "theta", "psi", "weights", "header")}


# ----------------------------------------------------------------------------
# Optimiser


@dataclass
class OptimizerState:
    """Adaptive-moment (or plain SGD) state keyed by parameter name."""

    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(state: OptimizerState, params: dict, grads: dict, lr: float) -> OptimizerState:
    """Update ``params`` in place and return the advanced state."""
    if state.kind == "sgd":
        for k, g in grads.items():
            params[k] -= (lr * g).astype(params[k].dtype)
        state.t += 1
        return state
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {params[k].shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[k] -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(params[k].dtype)
    return state


def _named(params: Params, mode: str) -> dict:
    """Views of every Adam-trained array keyed by a stable name."""
    out = {f"z{i}": z for i, z in enumerate(params.latents)}
    out.update({f"theta/{k}": v for k, v in params.theta.items()})
    out.update({f"psi/{k}": v for k, v in params.psi.items()})
    if mode == "dense_trained":
        out.update({f"w{i}": w for i, w in enumerate(params.syn)})
    return out


# ----------------------------------------------------------------------------
# Loss


@dataclass
class LossTerms:
    mse: float
    rate_bits: float
    loss: float


def quantized_latents(latents, temperature=None, noise=None):
    """Latents seen by the decoder model and ``d z_hat / d z``.

    ``temperature=None`` means hard rounding with its surrogate gradient.
    """
    if temperature is None:
        return ([hard_round(z) for z in latents],
                [hard_round_surrogate_grad(z) for z in latents])
    zh = [soft_round(z, temperature) for z in latents]
    if noise is not None:
        zh = [a + n.astype(a.dtype) for a, n in zip(zh, noise)]
    return zh, [soft_round_grad(z, temperature) for z in latents]


def rd_loss(model: CodecModel, params: Params, target, lam: float, masks=None,
            temperature=None, noise=None, with_grad: bool = True):
    """``MSE + lam * bits / (H W)`` and, optionally, gradients for every parameter group.

    Gradients are returned as ``{name: array}`` for the adaptive optimiser
    plus a list of score gradients (full mode only).
    """
    mode = model.arch.mode
    zh, dzh = quantized_latents(params.latents, temperature, noise)
    weights = model.weights_for(params, masks)
    rgb, cache = model.forward(zh, params.theta, weights)
    diff = rgb - target
    mse = float(np.mean(np.square(diff, dtype=np.float64)))
    scale = lam / model.n_pixels
    if not with_grad:
        bits = latent_rate_bits(zh, params.psi, model.template)
        return LossTerms(mse, bits, mse + scale * bits)
    d_rgb = ((2.0 / diff.size) * diff).astype(model.dtype)
    d_zd, d_theta, d_w = model.backward(cache, d_rgb, params.theta)
    bits, d_zr, d_psi = latent_rate_bits(zh, params.psi, model.template, with_grad=True)
    grads = {}
    for i, (a, b, g) in enumerate(zip(d_zd, d_zr, dzh)):
        grads[f"z{i}"] = ((a + scale * b) * g).astype(model.dtype)
    grads.update({f"theta/{k}": v for k, v in d_theta.items()})
    grads.update({f"psi/{k}": (scale * v).astype(model.dtype) for k, v in d_psi.items()})
    score_grads = []
    if mode == "dense_trained":
        grads.update({f"w{i}": g for i, g in enumerate(d_w)})
    elif mode == "full":
        score_grads = [g * w0 for g, w0 in zip(d_w, model.net.w0)]
    return LossTerms(mse, bits, mse + scale * bits), grads, score_grads


# ----------------------------------------------------------------------------
# Training


def _check_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"image must be 3 x H x W, got shape {img.shape}")
    if img.shape[1] < 1 or img.shape[2] < 1 or max(img.shape[1:]) >= 2 ** 16:
        raise ValueError(f"unsupported image size {img.shape[1:]}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def _divergence(cfg, stage, step, lr, params, terms, history):
    state = {
        "stage": stage,
        "step": step,
        "lr": lr,
        "loss": None if terms is None else [terms.mse, terms.rate_bits, terms.loss],
        "recent_history": history[-10:],
        "param_norms": {k: float(np.linalg.norm(v)) for k, v in _named(params, "dense_trained").items()},
        "config": cfg.to_dict(),
    }
    if cfg.dump_dir:
        path = Path(cfg.dump_dir) / f"divergence_seed{cfg.seed}_stage{stage}_step{step}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(state, indent=2, default=float))
        state["dump_path"] = str(path)
    return EncoderDivergenceError(f"non-finite loss at stage {stage} step {step}", state)


class _BestTracker:
    def __init__(self):
        self.cost = math.inf
        self.params = None
        self.where = None

    def offer(self, cost, params, where):
        if cost < self.cost:
            self.cost = cost
            self.params = params.copy()
            self.where = where


def train(model: CodecModel, target, cfg: EncoderConfig, params: Params | None = None):
    """Run both stages and return ``(best_params, best_cost, history)``."""
    mode = model.arch.mode
    params = model.init_params() if params is None else params
    history: list[dict] = []
    best = _BestTracker()

    def evaluate(stage, step, lr):
        masks = model.masks_from(params.syn) if mode == "full" else None
        terms = rd_loss(model, params, target, cfg.lam, masks, with_grad=False)
        if not math.isfinite(terms.loss):
            raise _divergence(cfg, stage, step, lr, params, terms, history)
        history.append({"stage": stage, "step": step, "mse": terms.mse,
                        "rate_bits": terms.rate_bits, "loss": terms.loss, "lr": lr})
        best.offer(terms.loss, params, (stage, step))

    def run_step(stage, step, lr, score_lr, temperature, noise):
        masks = model.masks_from(params.syn) if mode == "full" else None
        try:
            terms, grads, score_grads = rd_loss(model, params, target, cfg.lam, masks,
                                                temperature, noise)
        except (UnstableConfigurationError, FloatingPointError) as exc:
            raise _divergence(cfg, stage, step, lr, params, None, history) from exc
        if not math.isfinite(terms.loss):
            raise _divergence(cfg, stage, step, lr, params, terms, history)
        optimizer_step(opt, named, grads, lr)
        if score_grads:
            if cfg.score_optimizer == "sgd":
                update_scores(params.syn, score_grads, score_lr)
            else:
                optimizer_step(score_opt, score_named, dict(zip(score_named, score_grads)), score_lr)
        return terms

    named = _named(params, mode)
    score_named = {f"p{i}": s for i, s in enumerate(params.syn)} if mode == "full" else {}
    s1 = StageSchedule.stage1(cfg.steps1, cfg.lr1)
    opt = OptimizerState(kind=cfg.optimizer)
    score_opt = OptimizerState()
    score_ratio = cfg.score_lr / cfg.lr1
    n_lat_shapes = [z.shape for z in params.latents]
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(cfg.steps1):
            lr, temperature, a = s1.at(i)
            rng = derive_stream(cfg.seed, f"kumaraswamy/step{i}")
            noise = [kumaraswamy_noise(a, rng, shp) for shp in n_lat_shapes]
            run_step(1, i, lr, lr * score_ratio, temperature, noise)
            if (i + 1) % cfg.eval_interval == 0 or i + 1 == cfg.steps1:
                evaluate(1, i + 1, lr)

        if cfg.steps2:
            s2 = StageSchedule.stage2(cfg.steps2, cfg.lr2)
            plateau = PlateauDecay(s2.lr_start, s2.patience, s2.decay, s2.lr_floor)
            opt = OptimizerState(kind=cfg.optimizer)
            score_opt = OptimizerState()
            for i in range(cfg.steps2):
                lr = plateau.lr
                terms = run_step(2, i, lr, lr * score_ratio, None, None)
                plateau.step(terms.loss)
                if (i + 1) % cfg.eval_interval == 0 or i + 1 == cfg.steps2:
                    evaluate(2, i + 1, lr)
    return best.params, best.cost, history


# ----------------------------------------------------------------------------
# Emission


def _theta_template(model):
    from .modnet import init_modnet

    a = model.arch
    return init_modnet(a.d, a.n_levels, a.n_residual, 0, np.float32)


def _psi_template(model):
    from .arm import init_arm

    return init_arm(model.arch.c, 0, np.float32)


def emit(model: CodecModel, params: Params, target, cfg: EncoderConfig,
         image_name: str = "", train_cost: float = math.nan,
         history=None, wall_start: float | None = None):
    """Quantize networks, entropy code everything and build the record."""
    mode = model.arch.mode
    hw = model.n_pixels
    z_int = [hard_round(np.asarray(z, dtype=np.float64)).astype(np.int64) for z in params.latents]
    z64 = [z.astype(np.float64) for z in z_int]
    lo, hi = latent_bounds(z_int)
    masks = model.masks_from(params.syn) if mode == "full" else None

    psi_tpl, theta_tpl = _psi_template(model), _theta_template(model)
    theta_flat = flatten_params(params.theta)
    psi_flat = flatten_params(params.psi)

    def synth_weights(dense_hat=None):
        if mode == "full":
            return model.net.effective_weights(masks)
        if mode == "dense_trained":
            return dense_hat if dense_hat is not None else params.syn
        return None

    def latent_bits(psi_hat_flat):
        psi_hat = unflatten_params(psi_hat_flat, psi_tpl, np.float64)
        return latent_rate_bits(z64, psi_hat, model.template)

    def distortion(theta_hat_flat, dense_hat=None):
        th = unflatten_params(theta_hat_flat, theta_tpl, np.float32)
        rec = model.synthesize(z_int, th, synth_weights(dense_hat))
        return mse_fn(rec, target.reshape(rec.shape))

    n_weights = model.net.n_weights if model.net is not None else 0
    k_active = int(sum(int(np.count_nonzero(m)) for m in masks)) if masks is not None else 0
    mask_bits = mask_bits_model(n_weights, k_active) if mode == "full" else 0.0
    search = search_quantization_steps(
        theta_flat, psi_flat, latent_bits, distortion, cfg.lam, hw,
        cfg.step_exponents, fixed_bits=mask_bits,
    )

    psi_step, theta_step = search.psi_step, search.theta_step
    psi_payload, psi_q, psi_std = compress_network_params(psi_flat, psi_step)
    psi_hat = unflatten_params(dequantize(psi_q, psi_step), psi_tpl, np.float64)
    theta_payload, theta_q, theta_std = compress_network_params(theta_flat, theta_step)
    theta_hat = unflatten_params(dequantize(theta_q, theta_step), theta_tpl, np.float32)
    z_payload = encode_latents(z_int, as_float64(psi_hat), model.template, lo, hi)

    model_bits = {
        "z": latent_rate_bits(z64, psi_hat, model.template),
        "theta": param_bits_model(theta_q, theta_std, theta_step),
        "psi": param_bits_model(psi_q, psi_std, psi_step),
        "tau": mask_bits,
        "weights": 0.0,
    }
    dense_hat = None
    if mode == "full":
        flat_mask = np.concatenate([m.ravel() for m in masks]).astype(bool)
        tau_payload = encode_mask(flat_mask, k_active)
        weights_payload_bits = 0
    elif mode == "dense_trained":
        w_flat = np.concatenate([np.asarray(w, dtype=np.float64).ravel() for w in params.syn])
        w_tpl = {str(i): w for i, w in enumerate(params.syn)}
        theta_hat_flat = dequantize(theta_q, theta_step)

        def w_cost(k):
            step = step_from_index(k)
            q, std = quantize_params(w_flat, step)
            w_hat = list(unflatten_params(dequantize(q, step), w_tpl, np.float32).values())
            return distortion(theta_hat_flat, w_hat) + cfg.lam * param_bits_model(q, std, step) / hw

        w_costs = {k: w_cost(k) for k in cfg.step_exponents}
        w_k = min(w_costs, key=lambda k: (w_costs[k], k))
        w_step = step_from_index(w_k)
        w_payload, w_q, w_std = compress_network_params(w_flat, w_step)
        dense_hat = list(unflatten_params(dequantize(w_q, w_step), w_tpl, np.float32).values())
        tau_payload = np.array([w_k], np.uint8).tobytes() + np.float32(w_std).tobytes() + w_payload
        model_bits["weights"] = param_bits_model(w_q, w_std, w_step)
        weights_payload_bits = 8 * len(w_payload) - range_preamble_bits()
        k_active = n_weights
    else:
        tau_payload = b""
        weights_payload_bits = 0

    a = model.arch
    header = Header(
        height=model.height, width=model.width, seed=cfg.seed,
        mask_ratio=float(np.float32(a.mask_ratio)), d=a.d, c=a.c, n_levels=a.n_levels,
        n_residual=a.n_residual, phases=a.fourier.phases, freqs=a.fourier.freqs,
        hidden_dims=tuple(a.hidden_dims), latent_lo=lo, latent_hi=hi,
        theta_step=search.theta_index, psi_step=search.psi_index,
        theta_std=theta_std, psi_std=psi_std, k_active=k_active, mode=MODE_CODES[mode],
    )
    stream = CodecBitstream(header, {"psi": psi_payload, "z": z_payload,
                                     "theta": theta_payload, "tau": tau_payload})
    total_bits = stream.total_bits()

    recon = model.synthesize(z_int, theta_hat, synth_weights(dense_hat))
    recon8 = quantize_8bit(recon)
    mse8 = mse_fn(recon8.astype(np.float64) / 255.0, target.reshape(recon.shape))

    pre = range_preamble_bits()
    payload = {
        "z": 8 * len(z_payload),
        "theta": 8 * len(theta_payload) - pre,
        "psi": 8 * len(psi_payload) - pre,
        "tau": 8 * len(tau_payload) if mode == "full" else 0,
        "weights": weights_payload_bits,
    }
    header_bits = total_bits - sum(payload.values())
    macs = count_macs(model, masks)
    record = RDRecord(
        image=image_name, mode=mode, height=model.height, width=model.width,
        lam=cfg.lam, mask_ratio=a.mask_ratio, seed=cfg.seed, d=a.d, c=a.c,
        n_residual=a.n_residual, steps1=cfg.steps1, steps2=cfg.steps2,
        bpp_total=total_bits / hw,
        bpp_z=payload["z"] / hw, bpp_tau=payload["tau"] / hw,
        bpp_theta=payload["theta"] / hw, bpp_psi=payload["psi"] / hw,
        bpp_weights=payload["weights"] / hw, bpp_header=header_bits / hw,
        bits_model=float(sum(model_bits.values())),
        mse=mse8, psnr=psnr_from_mse(mse8), rd_cost=mse8 + cfg.lam * total_bits / hw,
        train_cost=train_cost, macs_lower=macs.lower, macs_upper=macs.upper,
        theta_step=search.theta_index, psi_step=search.psi_index,
        wall_time=0.0 if wall_start is None else time.perf_counter() - wall_start,
        model_bits=model_bits, history=list(history or []), reconstruction=recon,
    )
    return stream, record


def encode_image(image, cfg: EncoderConfig, image_name: str = "", mode: str = "full"):
    """Overfit the codec to one image; return ``(CodecBitstream, RDRecord)``."""
    start = time.perf_counter()
    img = _check_image(image)
    _, h, w = img.shape
    model = CodecModel(h, w, cfg.arch(mode), cfg.seed, np.float32)
    target = img.reshape(3, h * w).astype(np.float32)
    params, cost, history = train(model, target, cfg)
    log.info("trained %s (%s): best hard-rounded cost %.6g", image_name or "image", mode, cost)
    return emit(model, params, target, cfg, image_name, cost, history, start)


def ablation_encode(image, cfg: EncoderConfig, mode: str, image_name: str = "") -> RDRecord:
    if mode not in ("modnet_only", "dense_trained"):
        raise ValueError(f"ablation mode must be modnet_only or dense_trained, got {mode!r}")
    return encode_image(image, cfg, image_name, mode)[1]
