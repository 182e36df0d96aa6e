"""Forward pass with a recorded trace, and exact backprop of mean BCE.

The network body is a chain of hidden blocks, each
``dense -> ELU -> layer norm -> dropout``, followed by a single-logit output
layer. An optional scalar skip weight adds ``w_skip * s`` to the logit, where
``s`` is a per-row side input (the true label for dualFCNN).

Parameters live in an insertion-ordered dict; the order is the layer order
used for serialization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import LN_EPS, KernelError, check_finite, elu, elu_grad, sigmoid
from .rng import RngStream

ParamSet = dict  # name -> float64 ndarray


def n_hidden(params: ParamSet) -> int:
    n = 0
    while f"dense{n}.W" in params:
        n += 1
    return n


def glorot(rng: RngStream, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(input_dim: int, hidden: list[int], rng: RngStream, skip: bool = False) -> ParamSet:
    if not hidden:
        raise ValueError("at least one hidden layer is required")
    params: ParamSet = {}
    prev = input_dim
    for i, width in enumerate(hidden):
        params[f"dense{i}.W"] = glorot(rng, prev, width)
        params[f"dense{i}.b"] = np.zeros(width)
        params[f"norm{i}.gain"] = np.ones(width)
        params[f"norm{i}.offset"] = np.zeros(width)
        prev = width
    params["out.W"] = glorot(rng, prev, 1)
    params["out.b"] = np.zeros(1)
    if skip:
        params["skip.w"] = np.ones(1)
    return params


@dataclass
class ForwardTrace:
    params_ref: dict  # name -> the exact array objects used in the pass
    inputs: list  # input to each hidden block, then input to the output layer
    pre: list  # dense outputs before ELU
    xhat: list
    sigma: list
    masks: list
    rate: float
    train_mode: bool
    side: np.ndarray | None
    logits: np.ndarray
    scores: np.ndarray


def forward_trace(
    params: ParamSet,
    X: np.ndarray,
    side: np.ndarray | None = None,
    dropout_rate: float = 0.0,
    rng: RngStream | None = None,
    train_mode: bool = False,
    masks: list | None = None,
) -> ForwardTrace:
    """Run the network on a batch and keep everything backprop needs.

    ``masks`` replays fixed dropout masks instead of drawing new ones.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    check_finite(X)
    if not 0.0 <= dropout_rate < 1.0:
        raise KernelError(f"dropout rate must be in [0, 1), got {dropout_rate}")
    use_drop = train_mode and dropout_rate > 0.0
    if use_drop and masks is None and rng is None:
        raise KernelError("train-mode dropout needs an RngStream or fixed masks")
    if "skip.w" in params and side is None:
        raise KernelError("network has a skip weight but no side input was given")

    inputs, pre, xhats, sigmas, used_masks = [], [], [], [], []
    h = X
    for i in range(n_hidden(params)):
        W = params[f"dense{i}.W"]
        if h.shape[1] != W.shape[1]:
            raise KernelError(f"layer {i} expects {W.shape[1]} inputs, got {h.shape[1]}")
        inputs.append(h)
        z = h @ W.T + params[f"dense{i}.b"]
        a = elu(z)
        mu = a.mean(axis=1, keepdims=True)
        sig = np.sqrt(a.var(axis=1, keepdims=True) + LN_EPS)
        xh = (a - mu) / sig
        out = params[f"norm{i}.gain"] * xh + params[f"norm{i}.offset"]
        if use_drop:
            m = masks[i] if masks is not None else rng.uniform(size=out.shape) >= dropout_rate
            out = out * m / (1.0 - dropout_rate)
        else:
            m = None
        pre.append(z)
        xhats.append(xh)
        sigmas.append(sig)
        used_masks.append(m)
        h = out
    inputs.append(h)
    logits = h @ params["out.W"][0] + params["out.b"][0]
    if "skip.w" in params:
        side = np.asarray(side, dtype=np.float64).ravel()
        logits = logits + params["skip.w"][0] * side
    check_finite(logits, "logit")
    return ForwardTrace(
        params_ref=dict(params),
        inputs=inputs,
        pre=pre,
        xhat=xhats,
        sigma=sigmas,
        masks=used_masks,
        rate=dropout_rate,
        train_mode=use_drop,
        side=side,
        logits=logits,
        scores=sigmoid(logits),
    )


def backprop(params: ParamSet, trace: ForwardTrace | None, y) -> dict:
    """Gradients of mean binary cross-entropy w.r.t. every parameter."""
    if trace is None:
        raise KernelError("backprop needs a forward trace")
    if trace.params_ref.keys() != params.keys() or any(
        trace.params_ref[k] is not params[k] for k in params
    ):
        raise KernelError("forward trace is stale: parameters changed since the pass")
    y = np.asarray(y, dtype=np.float64).ravel()
    n = y.shape[0]
    if n != trace.scores.shape[0]:
        raise KernelError(f"label count {n} != batch size {trace.scores.shape[0]}")

    grads = {}
    dlogit = (trace.scores - y) / n
    h = trace.inputs[-1]
    grads["out.W"] = (dlogit @ h)[None, :]
    grads["out.b"] = np.array([dlogit.sum()])
    if "skip.w" in params:
        grads["skip.w"] = np.array([dlogit @ trace.side])
    dh = dlogit[:, None] * params["out.W"]
    for i in reversed(range(len(trace.pre))):
        if trace.train_mode:
            dh = dh * trace.masks[i] / (1.0 - trace.rate)
        xh = trace.xhat[i]
        grads[f"norm{i}.gain"] = (dh * xh).sum(axis=0)
        grads[f"norm{i}.offset"] = dh.sum(axis=0)
        dxh = dh * params[f"norm{i}.gain"]
        da = (
            dxh
            - dxh.mean(axis=1, keepdims=True)
            - xh * (dxh * xh).mean(axis=1, keepdims=True)
        ) / trace.sigma[i]
        dz = da * elu_grad(trace.pre[i])
        grads[f"dense{i}.W"] = dz.T @ trace.inputs[i]
        grads[f"dense{i}.b"] = dz.sum(axis=0)
        dh = dz @ params[f"dense{i}.W"]
    return {k: grads[k] for k in params}
