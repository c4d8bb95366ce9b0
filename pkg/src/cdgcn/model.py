"""Tensor graph convolution layer(s) built on the M-product.

One layer computes ``H = act((A * X) * U)`` with ``*`` the M-product over
the time axis.  Inside the transformed domain the inverse transform of
``A * X`` and the forward transform that ``(A * X) * U`` applies to it
cancel, so a layer is evaluated as::

    Z = ((A_hat facewise X_hat) facewise U_hat) x3 inv(M)

where ``_hat`` denotes ``x3 M``.  Gradients are exact reverse-mode
derivatives of that expression.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import MixingMatrix, SizeError, as_tensor3, facewise_product

ACTIVATIONS = ("relu", "identity")
CHECKPOINT_FORMAT = "cdgcn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(eq=False)
class ModelParams:
    """Parameter tensors, one ``(F_in, F_out, T)`` array per layer."""

    layers: list
    activations: list
    seed: int | None = None
    config: dict = field(default_factory=dict)

    @property
    def U(self) -> np.ndarray:
        return self.layers[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def copy(self) -> "ModelParams":
        return ModelParams([u.copy() for u in self.layers], list(self.activations),
                           self.seed, dict(self.config))


def _glorot(rng, f_in, f_out, T):
    bound = np.sqrt(6.0 / (f_in + f_out))
    return rng.uniform(-bound, bound, size=(f_in, f_out, T))


def init_params(F_in: int, F_out: int, T: int, seed=0, hidden_width: int | None = None,
                ) -> ModelParams:
    """Glorot-uniform parameters, drawn per frontal slice.

    Without ``hidden_width`` this is the single ReLU layer mapping
    ``F_in -> F_out``.  With it, a ReLU layer ``F_in -> hidden_width`` is
    followed by a linear layer ``hidden_width -> F_out``.
    """
    for name, v in (("F_in", F_in), ("F_out", F_out), ("T", T)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v}")
    rng = np.random.default_rng(seed)
    if hidden_width is None:
        return ModelParams([_glorot(rng, F_in, F_out, T)], ["relu"], seed)
    if int(hidden_width) != hidden_width or hidden_width < 1:
        raise ValueError(f"hidden_width must be a positive integer, got {hidden_width}")
    return ModelParams([_glorot(rng, F_in, hidden_width, T), _glorot(rng, hidden_width, F_out, T)],
                       ["relu", "identity"], seed)


@dataclass(eq=False)
class LayerCache:
    A_hat: np.ndarray
    X_hat: np.ndarray
    U_hat: np.ndarray
    AX_hat: np.ndarray
    Y_hat: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    activation: str


@dataclass(eq=False)
class ForwardCache:
    layers: list

    @property
    def H(self) -> np.ndarray:
        return self.layers[-1].H


def _activate(Z, activation):
    if activation == "relu":
        return np.maximum(Z, 0.0)
    if activation == "identity":
        return Z
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def _check_chain(A_t, W, params, M):
    N, F, T = W.shape
    if A_t.shape != (N, N, T):
        raise SizeError(f"adjacency tensor shape {A_t.shape} does not match (N, N, T)=({N}, {N}, {T})")
    if M.size != T:
        raise SizeError(f"mixing matrix size {M.size} does not match T={T}")
    f_in = F
    for k, U in enumerate(params.layers):
        if U.ndim != 3 or U.shape[0] != f_in or U.shape[2] != T:
            raise SizeError(f"layer {k} parameter shape {U.shape} does not match "
                            f"(F_in, *, T)=({f_in}, *, {T})")
        f_in = U.shape[1]


def forward(A_t, W, params: ModelParams, M: MixingMatrix, A_hat=None):
    """Evaluate the network.

    Parameters
    ----------
    A_t : ndarray, shape (N, N, T)
        Adjacency tensor.
    W : ndarray, shape (N, F, T)
        Complete input signal.
    params : ModelParams
    M : MixingMatrix
    A_hat : ndarray, optional
        Precomputed ``A_t x3 M``; the training loop passes it to avoid
        recomputing a constant.

    Returns
    -------
    H : ndarray, shape (N, F_out, T)
    cache : ForwardCache
    """
    A_t = as_tensor3(A_t, "A")
    X = as_tensor3(W, "W")
    _check_chain(A_t, X, params, M)
    if A_hat is None:
        A_hat = M.apply(A_t)
    layers = []
    for U, act in zip(params.layers, params.activations):
        X_hat = M.apply(X)
        U_hat = M.apply(U)
        AX_hat = facewise_product(A_hat, X_hat)
        Y_hat = facewise_product(AX_hat, U_hat)
        Z = M.solve(Y_hat)
        H = _activate(Z, act)
        layers.append(LayerCache(A_hat, X_hat, U_hat, AX_hat, Y_hat, Z, H, act))
        X = H
    return X, ForwardCache(layers)


def _transpose_slices(X):
    return X.transpose(1, 0, 2)


def backward(cache: ForwardCache, dL_dH, A_t, W, params: ModelParams, M: MixingMatrix):
    """Gradient of a scalar loss with respect to every parameter tensor.

    ``dL_dH`` is the gradient with respect to the network output.  Returns
    a list aligned with ``params.layers``; for the default single layer
    ``backward(...)[0]`` is ``dL/dU``.
    """
    if len(cache.layers) != params.n_layers:
        raise SizeError(f"cache has {len(cache.layers)} layers, params have {params.n_layers}")
    G = np.asarray(dL_dH, dtype=np.float64)
    if G.shape != cache.H.shape:
        raise SizeError(f"output gradient shape {G.shape} != output shape {cache.H.shape}")
    grads = [None] * params.n_layers
    for k in reversed(range(params.n_layers)):
        c = cache.layers[k]
        if c.U_hat.shape != M.apply(params.layers[k]).shape:
            raise SizeError(f"cache does not match layer {k} parameters")
        if c.activation == "relu":
            G = np.where(c.Z > 0.0, G, 0.0)
        G_hat = M.solve(G, transpose=True)
        dU_hat = facewise_product(_transpose_slices(c.AX_hat), G_hat)
        grads[k] = M.apply(dU_hat, transpose=True)
        if k > 0:
            dAX_hat = facewise_product(G_hat, _transpose_slices(c.U_hat))
            dX_hat = facewise_product(_transpose_slices(c.A_hat), dAX_hat)
            G = M.apply(dX_hat, transpose=True)
    return grads


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, params: ModelParams) -> None:
    """Write parameters as JSON (the format is described in the README)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "config": params.config,
        "layers": [
            {"dims": list(U.shape), "activation": act,
             "values": [float(v) for v in U.ravel(order="C")]}
            for U, act in zip(params.layers, params.activations)
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    layers, acts = [], []
    for layer in doc["layers"]:
        dims = tuple(layer["dims"])
        values = np.array(layer["values"], dtype=np.float64)
        if len(dims) != 3 or values.size != int(np.prod(dims)):
            raise ValueError(f"{path}: layer dims {dims} do not match {values.size} values")
        layers.append(values.reshape(dims, order="C"))
        acts.append(layer["activation"])
    return ModelParams(layers, acts, doc.get("seed"), doc.get("config", {}))
