"""Training and evaluation orchestration.

One training session is a single deterministic sequence of steps: per step,
forward the original batch (token adaptor residuals included), forward the
augmented batch through the shared encoder when the sample-level loss is
active, compute per-layer contrastive terms (averaged over layers), decode
masks from the final layer, combine the objective, backpropagate, and apply
AdamW to adaptor and decoder weights only.  Frozen encoder tensors are never
updated.

All randomness derives from the config seed through fixed-purpose
SeedSequence spawn keys, so resuming from a checkpoint reproduces the exact
step stream of an uninterrupted run.  Batch reductions are sequential
left-to-right sums (fixed order, documented for determinism).
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .adaptors import ContrastConfig, sample_contrastive_loss, token_adaptor_is_zero, token_contrastive_loss
from .augment import parse_strategy, sample_view
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, config_from_text, config_to_text
from .encoder import EncoderConfig, EncoderState, encoder_forward, init_encoder_state, tokenize
from .errors import ConfigError, ContractError, TrainingAbortError
from .metrics import EvalPair, MetricReport, dice_iou, evaluate_dataset
from .objectives import DecoderWeights, MaskPair, bce_loss, combine_losses, decode_mask, init_decoder, iou_loss
from .synthdata import Sample, load_split
from .tensor import Graph, Tensor, backward

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01

# SeedSequence purpose tags (first spawn-key word)
_PURPOSE_INIT = 0
_PURPOSE_SHUFFLE = 1
_PURPOSE_AUGMENT = 2
_PURPOSE_PAIR_SUBSAMPLE = 3

LOG_FIELDS = ("epoch", "lr", "bce", "iou_loss", "cl_t", "cl_s", "total", "train_dice")


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Stateless deterministic generator for (seed, purpose, indices...)."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))
    )


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Cosine decay from lr_start (step 0) to lr_end (step = total_steps)."""
    if total_steps < 1:
        raise ContractError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    # Exact endpoints as configured (the midpoint formula rounds).
    if step == 0:
        return lr_start
    if step == total_steps:
        return lr_end
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adamw_step(
    weights: Tensor,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
    weight_decay: float = WEIGHT_DECAY,
    name: str = "",
) -> AdamState:
    """Decoupled-weight-decay Adam with bias correction; updates in place."""
    grad = np.asarray(grad, dtype=weights.data.dtype)
    if grad.shape != weights.data.shape:
        raise ContractError(
            f"gradient shape {grad.shape} vs weights {weights.data.shape} ({name})"
        )
    if not np.all(np.isfinite(grad)):
        raise TrainingAbortError(f"non-finite gradient for tensor {name or '<unnamed>'}")
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    weights.data = weights.data - lr * (
        m_hat / (np.sqrt(v_hat) + eps) + weight_decay * weights.data
    )
    return state


@dataclass
class ModelState:
    encoder_cfg: EncoderConfig
    encoder: EncoderState
    decoder: DecoderWeights


def init_model(cfg: TrainConfig) -> ModelState:
    """Seeded model; the same seed yields identical weights for every variant."""
    rng = derive_rng(cfg.seed, _PURPOSE_INIT)
    enc_cfg = cfg.encoder_config()
    return ModelState(
        encoder_cfg=enc_cfg,
        encoder=init_encoder_state(enc_cfg, rng, cfg.bottleneck),
        decoder=init_decoder(cfg.embed_dim),
    )


def named_tensors(model: ModelState) -> "OrderedDict[str, Tensor]":
    """Canonical name -> tensor map used for checkpoints and the optimizer."""
    out: "OrderedDict[str, Tensor]" = OrderedDict()
    enc = model.encoder
    out["patch_proj.w"] = enc.patch_projection
    out["patch_proj.b"] = enc.patch_bias
    out["pos_embed"] = enc.position_embedding
    for i, layer in enumerate(enc.layers):
        base = f"layer{i}"
        for field in ("ln1_g", "ln1_b", "w_q", "b_q", "w_k", "b_k", "w_v", "b_v",
                      "w_o", "b_o", "ln2_g", "ln2_b", "w_mlp1", "b_mlp1",
                      "w_mlp2", "b_mlp2"):
            out[f"{base}.{field}"] = getattr(layer, field)
    for i, pair in enumerate(enc.adaptors):
        for field in ("w_down", "b_down", "w_up", "b_up"):
            out[f"layer{i}.tc.{field}"] = getattr(pair.token, field)
        for field in ("w_p", "b_p", "w_down", "b_down", "w_up", "b_up"):
            out[f"layer{i}.sc.{field}"] = getattr(pair.sample, field)
    out["decoder.w"] = model.decoder.w
    out["decoder.b"] = model.decoder.b
    return out


def tunable_names(model: ModelState, cfg: TrainConfig) -> List[str]:
    """Decoder always; token adaptors when enabled; sample adaptors when used."""
    names = []
    n = len(model.encoder.adaptors)
    if cfg.adaptors_enabled:
        for i in range(n):
            names += [f"layer{i}.tc.{f}" for f in ("w_down", "b_down", "w_up", "b_up")]
    if cfg.use_sample_loss:
        for i in range(n):
            names += [
                f"layer{i}.sc.{f}"
                for f in ("w_p", "b_p", "w_down", "b_down", "w_up", "b_up")
            ]
    names += ["decoder.w", "decoder.b"]
    return names


def frozen_names(model: ModelState, cfg: TrainConfig) -> List[str]:
    all_tunable = set(tunable_names(model, cfg))
    return [n for n in named_tensors(model) if n not in all_tunable]


def _mean_tensors(parts: Sequence[Tensor]) -> Tensor:
    """Sequential left-to-right mean (fixed reduction order)."""
    acc = parts[0]
    for p in parts[1:]:
        acc = acc + p
    return acc * (1.0 / len(parts))


@dataclass
class TrainResult:
    model: ModelState
    log: List[Dict[str, float]]
    tensors: "OrderedDict[str, np.ndarray]"  # checkpoint payload
    config_text: str
    step: int


def _load_model_arrays(model: ModelState, arrays: Dict[str, np.ndarray]) -> None:
    named = named_tensors(model)
    for name, tensor in named.items():
        if name not in arrays:
            raise ConfigError(f"checkpoint is missing tensor {name!r}")
        arr = arrays[name]
        if tuple(arr.shape) != tuple(tensor.data.shape):
            raise ConfigError(
                f"checkpoint tensor {name!r} has shape {arr.shape}, "
                f"model expects {tensor.data.shape}"
            )
        tensor.data = arr.astype(tensor.data.dtype, copy=True)


def model_from_checkpoint(path: str) -> Tuple[ModelState, TrainConfig, int]:
    """Rebuild a model from the self-describing checkpoint config echo."""
    arrays, config_text, step = load_checkpoint(path)
    cfg = config_from_text(config_text)
    model = init_model(cfg)
    _load_model_arrays(model, arrays)
    return model, cfg, step


def checkpoint_payload(model: ModelState, opt: Dict[str, AdamState]) -> "OrderedDict[str, np.ndarray]":
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, t in named_tensors(model).items():
        tensors[name] = t.data.copy()
    for name, state in opt.items():
        tensors[f"opt.{name}.m"] = state.m.copy()
        tensors[f"opt.{name}.v"] = state.v.copy()
        tensors[f"opt.{name}.t"] = np.asarray(float(state.t), dtype=np.float32)
    return tensors


def _clear_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _forward_predict(model: ModelState, image: np.ndarray, adaptors_enabled: bool) -> Tensor:
    x0 = tokenize(image, model.encoder_cfg, model.encoder)
    xs, _ = encoder_forward(x0, model.encoder, adaptors_enabled)
    return decode_mask(xs[-1], model.decoder, model.encoder_cfg.patch_size)


def _train_step(
    model: ModelState,
    batch: List[Sample],
    cfg: TrainConfig,
    lr: float,
    opt: Dict[str, AdamState],
    epoch: int,
    step_in_epoch: int,
    global_step: int,
) -> Dict[str, float]:
    enc = model.encoder
    n_layers = len(enc.layers)
    contrast = ContrastConfig(
        temperature=cfg.temperature,
        token_pair_limit=cfg.token_pair_limit or None,
    )
    strategy = parse_strategy(cfg.strategy)
    # Layers whose token adaptor output is exactly zero (only at
    # initialization) are omitted from the token loss: the cosine of a zero
    # vector is undefined.  Mask-loss gradients make them nonzero after the
    # first update.
    tc_zero = [token_adaptor_is_zero(pair.token) for pair in enc.adaptors]
    pair_rng = (
        derive_rng(cfg.seed, _PURPOSE_PAIR_SUBSAMPLE, global_step)
        if cfg.token_pair_limit
        else None
    )

    bce_parts: List[Tensor] = []
    iou_parts: List[Tensor] = []
    clt_parts: List[Tensor] = []
    emb_orig: List[List[Tensor]] = [[] for _ in range(n_layers)]
    emb_aug: List[List[Tensor]] = [[] for _ in range(n_layers)]

    try:
        with Graph() as g:
            for pos, sample in enumerate(batch):
                x0 = tokenize(sample.image, model.encoder_cfg, enc)
                xs, ys = encoder_forward(x0, enc, cfg.adaptors_enabled)
                # Contrastive terms anchor on each adaptor's INPUT tokens
                # (X^i = what layer i consumed), not on the layer outputs:
                # the token loss aligns the residual with the tokens it was
                # computed from.
                x_in = [x0] + xs[:-1]
                pred = decode_mask(xs[-1], model.decoder, model.encoder_cfg.patch_size)
                pair = MaskPair(pred, sample.mask)
                bce_parts.append(bce_loss(pair))
                iou_parts.append(iou_loss(pair))
                if cfg.use_token_loss and cfg.adaptors_enabled:
                    layer_losses = [
                        token_contrastive_loss(x_in[i], ys[i], contrast, pair_rng)
                        for i in range(n_layers)
                        if not tc_zero[i]
                    ]
                    if layer_losses:
                        clt_parts.append(_mean_tensors(layer_losses))
                if cfg.use_sample_loss:
                    aug_rng = derive_rng(
                        cfg.seed, _PURPOSE_AUGMENT, epoch,
                        step_in_epoch * cfg.batch_size + pos,
                    )
                    aug_image = sample_view(sample.image, strategy, aug_rng)
                    x0a = tokenize(aug_image, model.encoder_cfg, enc)
                    xsa, _ = encoder_forward(
                        x0a, enc, cfg.adaptors_enabled and cfg.aug_adapted_forward
                    )
                    xa_in = [x0a] + xsa[:-1]
                    from .adaptors import sc_forward

                    for i in range(n_layers):
                        emb_orig[i].append(sc_forward(x_in[i], enc.adaptors[i].sample))
                        emb_aug[i].append(sc_forward(xa_in[i], enc.adaptors[i].sample))

            bce = _mean_tensors(bce_parts)
            iou = _mean_tensors(iou_parts)
            cl_t = _mean_tensors(clt_parts) if clt_parts else 0.0
            if cfg.use_sample_loss:
                layer_cls = [
                    sample_contrastive_loss(emb_orig[i], emb_aug[i], contrast)
                    for i in range(n_layers)
                ]
                cl_s = _mean_tensors(layer_cls)
            else:
                cl_s = 0.0
            total = combine_losses(bce, iou, cl_t, cl_s, cfg.loss_weights)
            backward(g, total)
    except TrainingAbortError as exc:
        raise TrainingAbortError(f"step {global_step}: {exc}") from exc

    named = named_tensors(model)
    for name in tunable_names(model, cfg):
        tensor = named[name]
        grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        try:
            adamw_step(tensor, grad, opt[name], lr, name=name)
        except TrainingAbortError as exc:
            raise TrainingAbortError(f"step {global_step}: {exc}") from exc
    _clear_grads(list(named.values()))

    return {
        "bce": bce.item(),
        "iou_loss": iou.item(),
        "cl_t": cl_t.item() if isinstance(cl_t, Tensor) else 0.0,
        "cl_s": cl_s.item() if isinstance(cl_s, Tensor) else 0.0,
        "total": total.item(),
    }


def _train_set_dice(model: ModelState, samples: List[Sample], cfg: TrainConfig) -> float:
    scores = []
    for s in samples:
        pred = _forward_predict(model, s.image, cfg.adaptors_enabled)
        d, _ = dice_iou(EvalPair(pred.data, s.mask))
        scores.append(d)
    return float(np.mean(scores))


def train(
    cfg: TrainConfig,
    resume_from: Optional[str] = None,
    stop_after_steps: Optional[int] = None,
) -> TrainResult:
    """Run the configured session; returns final weights, log, and payload.

    ``stop_after_steps`` suspends the session once that many global steps
    have completed, without shortening the learning-rate schedule; resuming
    the saved checkpoint under the same config reproduces the uninterrupted
    run bitwise.
    """
    samples = load_split(cfg.data_root, "train")
    model = init_model(cfg)
    opt = {
        name: AdamState(
            m=np.zeros_like(named_tensors(model)[name].data),
            v=np.zeros_like(named_tensors(model)[name].data),
        )
        for name in tunable_names(model, cfg)
    }
    start_step = 0
    if resume_from is not None:
        arrays, config_text, start_step = load_checkpoint(resume_from)
        resumed_cfg = config_from_text(config_text)
        if resumed_cfg.encoder_config() != cfg.encoder_config():
            raise ConfigError("checkpoint geometry does not match the config")
        _load_model_arrays(model, arrays)
        for name, state in opt.items():
            mk, vk, tk = f"opt.{name}.m", f"opt.{name}.v", f"opt.{name}.t"
            if mk in arrays:
                state.m = arrays[mk].astype(np.float32, copy=True)
                state.v = arrays[vk].astype(np.float32, copy=True)
                state.t = int(round(float(arrays[tk])))

    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    if start_step > total_steps:
        raise ConfigError(
            f"checkpoint step {start_step} exceeds configured schedule {total_steps}"
        )
    global_step = start_step
    start_epoch = start_step // steps_per_epoch if steps_per_epoch else 0
    start_offset = start_step % steps_per_epoch if steps_per_epoch else 0

    log: List[Dict[str, float]] = []
    suspended = False
    for epoch in range(start_epoch, cfg.epochs):
        if suspended:
            break
        order = derive_rng(cfg.seed, _PURPOSE_SHUFFLE, epoch).permutation(len(samples))
        sums = {k: 0.0 for k in ("bce", "iou_loss", "cl_t", "cl_s", "total")}
        n_steps = 0
        epoch_lr = None
        for b in range(steps_per_epoch):
            if epoch == start_epoch and b < start_offset:
                continue
            if stop_after_steps is not None and global_step >= stop_after_steps:
                suspended = True
                break
            idxs = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [samples[i] for i in idxs]
            lr = cosine_lr(global_step, total_steps, cfg.lr_start, cfg.lr_end)
            if epoch_lr is None:
                epoch_lr = lr
            terms = _train_step(model, batch, cfg, lr, opt, epoch, b, global_step)
            global_step += 1
            n_steps += 1
            for k in sums:
                sums[k] += terms[k]
        if n_steps == 0:
            continue
        row = {"epoch": float(epoch), "lr": float(epoch_lr if epoch_lr is not None else 0.0)}
        for k in sums:
            row[k] = sums[k] / n_steps
        row["train_dice"] = _train_set_dice(model, samples, cfg)
        log.append(row)

    return TrainResult(
        model=model,
        log=log,
        tensors=checkpoint_payload(model, opt),
        config_text=config_to_text(cfg),
        step=global_step,
    )


def log_to_csv(log: List[Dict[str, float]]) -> str:
    lines = [",".join(LOG_FIELDS)]
    for row in log:
        lines.append(
            ",".join(
                (str(int(row["epoch"])) if f == "epoch" else f"{row[f]:.8g}")
                for f in LOG_FIELDS
            )
        )
    return "\n".join(lines) + "\n"


def evaluate(model: ModelState, samples: List[Sample], cfg: TrainConfig) -> MetricReport:
    """Inference scoring: no augmentation branch, no contrastive losses."""
    pairs, names = [], []
    for s in samples:
        pred = _forward_predict(model, s.image, cfg.adaptors_enabled)
        pairs.append(EvalPair(np.clip(pred.data.astype(np.float64), 0.0, 1.0), s.mask))
        names.append(s.id)
    return evaluate_dataset(pairs, names)


def save_result(result: TrainResult, path: str) -> None:
    save_checkpoint(path, result.tensors, result.config_text, result.step)


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

ABLATION_METRICS = ("mae", "s_measure", "e_measure", "ber", "dice", "iou")


def run_ablation(
    base_cfg: TrainConfig,
    variants: Optional[Sequence[str]] = None,
    seeds: Sequence[int] = (0,),
    strategies: Optional[Sequence[str]] = None,
) -> Tuple[List[Dict[str, object]], str]:
    """Train/evaluate each (value, seed); one aggregated row per value.

    Exactly one of ``variants`` (component ablation) or ``strategies``
    (augmentation-strategy ablation) must be given.
    Returns (rows, csv_text); each row holds mean and stddev per metric
    aggregated over seeds (population stddev).
    """
    from dataclasses import replace

    if (variants is None) == (strategies is None):
        raise ContractError("pass exactly one of variants or strategies")
    if not seeds:
        raise ContractError("need at least one seed")
    values = list(variants) if variants is not None else list(strategies)
    if not values:
        raise ContractError("need at least one ablation value")
    axis = "variant" if variants is not None else "strategy"

    test_samples = load_split(base_cfg.data_root, "test")
    rows: List[Dict[str, object]] = []
    for value in values:
        per_seed: List[Dict[str, float]] = []
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, **{axis: value})
            result = train(cfg)
            report = evaluate(result.model, test_samples, cfg)
            per_seed.append(report.means)
        row: Dict[str, object] = {"name": value, "seeds": len(seeds)}
        for metric in ABLATION_METRICS:
            vals = np.array([m[metric] for m in per_seed])
            row[f"{metric}_mean"] = float(vals.mean())
            row[f"{metric}_std"] = float(vals.std())
        rows.append(row)

    header = ["name", "seeds"]
    for metric in ABLATION_METRICS:
        header += [f"{metric}_mean", f"{metric}_std"]
    lines = [",".join(header)]
    for row in rows:
        cells = [str(row["name"]), str(row["seeds"])]
        for metric in ABLATION_METRICS:
            cells += [f"{row[f'{metric}_mean']:.6f}", f"{row[f'{metric}_std']:.6f}"]
        lines.append(",".join(cells))
    return rows, "\n".join(lines) + "\n"
