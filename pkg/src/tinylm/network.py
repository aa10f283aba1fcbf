"""Decoder forward pass with exact reverse-mode gradients.

Architecture: token embedding, per layer {RMSNorm -> causal multi-head
attention with rotary positions -> residual; RMSNorm -> SwiGLU MLP ->
residual}, final RMSNorm, untied head. Everything runs in float64 on CPU.
"""
import logging

import numpy as np
import torch
import torch.nn.functional as F

from exceptions import InvalidInput, NumericalError
from tinylm.model import Batch, LayerKind, ModelConfig, ParamSet
from tinylm.params import sparse_mask, validate_params

logger = logging.getLogger(__name__)

torch.use_deterministic_algorithms(True)
DTYPE = torch.float64


def _tensors(params: ParamSet, requires_grad: bool = False) -> dict[str, torch.Tensor]:
    return {key: torch.tensor(value, dtype=DTYPE, requires_grad=requires_grad)
            for key, value in params.items()}


def _tokens(batch: Batch, cfg: ModelConfig) -> torch.Tensor:
    ids = np.asarray(batch.token_ids)
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InvalidInput({"msg": "token id out of vocabulary range",
                            "vocab_size": cfg.vocab_size})
    if ids.shape[1] > cfg.max_seq_len:
        raise InvalidInput({"msg": "sequence longer than max_seq_len",
                            "seq_len": int(ids.shape[1]),
                            "max_seq_len": cfg.max_seq_len})
    return torch.as_tensor(ids, dtype=torch.long)


def _rms_norm(x: torch.Tensor, weight: torch.Tensor, eps: float) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps) * weight


def _rotary(cfg: ModelConfig, seq_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    half = cfg.head_dim // 2
    inv_freq = cfg.rope_base ** (-torch.arange(half, dtype=DTYPE) * 2.0 / cfg.head_dim)
    angles = torch.arange(seq_len, dtype=DTYPE)[:, None] * inv_freq[None, :]
    angles = torch.cat([angles, angles], dim=-1)
    return torch.cos(angles), torch.sin(angles)


def _rotate_half(x: torch.Tensor) -> torch.Tensor:
    half = x.shape[-1] // 2
    return torch.cat([-x[..., half:], x[..., :half]], dim=-1)


def _project(x: torch.Tensor, t: dict[str, torch.Tensor],
             cfg: ModelConfig, key: str) -> torch.Tensor:
    kind = cfg.layer_kind
    if kind == LayerKind.dense:
        return x @ t[key].T
    if kind == LayerKind.cola:
        inner = x @ t[f"{key}.A"].T
        if cfg.cola_activation == "silu":
            inner = F.silu(inner)
        return inner @ t[f"{key}.B"].T
    if kind == LayerKind.sltrain:
        mask = torch.as_tensor(sparse_mask(cfg, key).astype(np.float64))
        low_rank = (x @ t[f"{key}.A"].T) @ t[f"{key}.B"].T
        return low_rank + x @ (t[f"{key}.S"] * mask).T
    # adapter: frozen base plus B A
    return x @ t[f"{key}.W"].T + (x @ t[f"{key}.A"].T) @ t[f"{key}.B"].T


def _check(x: torch.Tensor, tag: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericalError("non-finite activation", layer=tag)


def _forward(t: dict[str, torch.Tensor], cfg: ModelConfig, tokens: torch.Tensor,
             capture: bool = False) -> tuple[torch.Tensor, list[torch.Tensor]]:
    rows, seq_len = tokens.shape
    x = t["embed"][tokens]
    hidden = [x] if capture else []
    cos, sin = _rotary(cfg, seq_len)
    causal = torch.triu(torch.ones(seq_len, seq_len, dtype=torch.bool), diagonal=1)
    scale = 1.0 / np.sqrt(cfg.head_dim)

    for layer in range(cfg.n_layers):
        prefix = f"layers.{layer}"
        a = _rms_norm(x, t[f"{prefix}.attn_norm"], cfg.norm_eps)
        q, k, v = (_project(a, t, cfg, f"{prefix}.{role}")
                   .view(rows, seq_len, cfg.n_heads, cfg.head_dim)
                   .transpose(1, 2)
                   for role in ("wq", "wk", "wv"))
        q = q * cos + _rotate_half(q) * sin
        k = k * cos + _rotate_half(k) * sin
        scores = (q @ k.transpose(-2, -1)) * scale
        scores = scores.masked_fill(causal, float("-inf"))
        attn = torch.softmax(scores, dim=-1) @ v
        attn = attn.transpose(1, 2).reshape(rows, seq_len, cfg.d_model)
        x = x + _project(attn, t, cfg, f"{prefix}.wo")

        m = _rms_norm(x, t[f"{prefix}.mlp_norm"], cfg.norm_eps)
        gate = F.silu(_project(m, t, cfg, f"{prefix}.w_gate"))
        up = _project(m, t, cfg, f"{prefix}.w_up")
        x = x + _project(gate * up, t, cfg, f"{prefix}.w_down")
        _check(x, prefix)
        if capture and layer < cfg.n_layers - 1:
            hidden.append(x)

    x = _rms_norm(x, t["final_norm"], cfg.norm_eps)
    if capture:
        hidden.append(x)
    out = x @ t["head"].T
    _check(out, "head")
    return out, hidden


def _token_losses(t: dict[str, torch.Tensor], cfg: ModelConfig,
                  tokens: torch.Tensor) -> torch.Tensor:
    out, _ = _forward(t, cfg, tokens)
    vocab = out.shape[-1]
    losses = F.cross_entropy(out[:, :-1].reshape(-1, vocab),
                             tokens[:, 1:].reshape(-1),
                             reduction="none")
    return losses.view(tokens.shape[0], tokens.shape[1] - 1)


def forward_token_losses(params: ParamSet, cfg: ModelConfig, batch: Batch) -> np.ndarray:
    """Per-position next-token cross-entropy, shape ``(batch, seq_len - 1)``."""
    validate_params(params, cfg)
    with torch.no_grad():
        losses = _token_losses(_tensors(params), cfg, _tokens(batch, cfg))
    return losses.numpy()


def forward_loss(params: ParamSet, cfg: ModelConfig, batch: Batch) -> float:
    """Mean token-level cross-entropy over all predicted positions.

    Raises:
        NumericalError: a block produced non-finite activations (tagged with the layer)
    """
    validate_params(params, cfg)
    with torch.no_grad():
        losses = _token_losses(_tensors(params), cfg, _tokens(batch, cfg))
        loss = losses.mean()
    if not torch.isfinite(loss):
        raise NumericalError("non-finite loss", layer="loss")
    return float(loss)


def forward_grads(params: ParamSet, cfg: ModelConfig,
                  batch: Batch) -> tuple[float, ParamSet]:
    """Loss and its exact gradient for every tensor of ``params``."""
    validate_params(params, cfg)
    t = _tensors(params, requires_grad=True)
    loss = _token_losses(t, cfg, _tokens(batch, cfg)).mean()
    if not torch.isfinite(loss):
        raise NumericalError("non-finite loss", layer="loss")
    loss.backward()
    grads = {key: (tensor.grad.numpy().copy() if tensor.grad is not None
                   else np.zeros_like(params[key]))
             for key, tensor in t.items()}
    return float(loss.detach()), grads


def logits(params: ParamSet, cfg: ModelConfig, batch: Batch) -> np.ndarray:
    validate_params(params, cfg)
    with torch.no_grad():
        out, _ = _forward(_tensors(params), cfg, _tokens(batch, cfg))
    return out.numpy()


def capture_hidden_states(params: ParamSet, cfg: ModelConfig,
                          batch: Batch) -> list[np.ndarray]:
    """Activations ``H[l]`` of shape ``(N, d_model)`` for ``l = 0..n_layers``.

    ``H[0]`` is the embedding output, intermediate entries are the post-block
    residual stream and ``H[n_layers]`` is the last block after the final norm.
    """
    validate_params(params, cfg)
    with torch.no_grad():
        _, hidden = _forward(_tensors(params), cfg, _tokens(batch, cfg), capture=True)
    return [h.reshape(-1, cfg.d_model).numpy().copy() for h in hidden]


def validation_loss(params: ParamSet, cfg: ModelConfig, valset: Batch,
                    chunk_rows: int = 16) -> float:
    """Validation loss over the fixed subset, evaluated in equal-length chunks."""
    validate_params(params, cfg)
    total = 0.0
    count = 0
    with torch.no_grad():
        t = _tensors(params)
        for chunk in valset.chunks(chunk_rows):
            losses = _token_losses(t, cfg, _tokens(chunk, cfg))
            total += float(losses.sum())
            count += losses.numel()
    loss = total / count
    if not np.isfinite(loss):
        raise NumericalError("non-finite validation loss", layer="loss")
    return loss


def validation_loss_fn(cfg: ModelConfig, valset: Batch):
    """``params -> validation_loss(params, cfg, valset)``, the probe used by metrics."""
    def loss_fn(params: ParamSet) -> float:
        return validation_loss(params, cfg, valset)
    return loss_fn
