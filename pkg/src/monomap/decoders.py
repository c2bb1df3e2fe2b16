"""Dual-path decoding: geometry features -> signed distance, and
coordinates + appearance features -> color."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Param, ParamStore, Tape, Var

HIDDEN_WIDTH = 32
HIDDEN_LAYERS = 2


class Mlp:
    """Shallow ReLU MLP: input -> 32 -> 32 -> output, weights in a ParamStore."""

    def __init__(self, store: ParamStore, name: str, group: str,
                 in_dim: int, out_dim: int, rng: np.random.Generator,
                 hidden: int = HIDDEN_WIDTH, out_bias: float = 0.0) -> None:
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.hidden = int(hidden)
        dims = [in_dim] + [hidden] * HIDDEN_LAYERS + [out_dim]
        self.weights: list[Param] = []
        self.biases: list[Param] = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            self.weights.append(store.add_param(
                f"{name}/w{i}", ad.glorot_uniform(rng, a, b), group))
            bias = np.zeros(b)
            if i == len(dims) - 2:
                bias[:] = out_bias
            self.biases.append(store.add_param(f"{name}/b{i}", bias, group))

    def params(self) -> list[Param]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def forward(self, tape: Tape, x) -> Var:
        width = x.shape[1]
        if width != self.in_dim:
            raise ValueError(
                f"decoder expects {self.in_dim} input channels, got {width}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.matmul(h, tape.leaf(w)) + tape.leaf(b)
            if i != last:
                h = ad.relu(h)
        return h


def build_geo_decoder(store: ParamStore, in_dim: int, rng: np.random.Generator,
                      coarsest_cell: float = 0.64) -> Mlp:
    """Geometry decoder; output bias starts slightly positive so the initial
    field reads as mostly free space."""
    return Mlp(store, "mlp_geo", "mlp_geo", in_dim, 1, rng,
               out_bias=0.1 * coarsest_cell)


def build_app_decoder(store: ParamStore, feat_dim: int, rng: np.random.Generator,
                      with_coords: bool = True) -> Mlp:
    in_dim = feat_dim + 3 if with_coords else feat_dim
    return Mlp(store, "mlp_app", "mlp_app", in_dim, 3, rng)


def decode_geo(tape: Tape, mlp: Mlp, f_geo) -> Var:
    """Signed distance per sample from geometry features, shape (M,)."""
    out = mlp.forward(tape, f_geo)
    return ad.reshape(out, (out.shape[0],))


def decode_app(tape: Tape, mlp: Mlp, p_norm, f_app) -> Var:
    """Color per sample from normalized coordinates plus appearance features.

    Coordinates occupy the first three input slots. Output is squashed by a
    sigmoid so colors stay strictly inside (0, 1).
    """
    if not isinstance(p_norm, Var):
        p_norm = np.asarray(p_norm, dtype=np.float64)
    if p_norm.ndim != 2 or p_norm.shape[1] != 3:
        raise ValueError(f"expected (M, 3) coordinates, got {p_norm.shape}")
    if isinstance(f_app, Var) or isinstance(p_norm, Var):
        coords = p_norm if isinstance(p_norm, Var) else tape.constant(p_norm)
        feats = f_app if isinstance(f_app, Var) else tape.constant(
            np.asarray(f_app, dtype=np.float64))
        x = ad.concat([coords, feats], axis=1)
    else:
        x = np.concatenate([p_norm, np.asarray(f_app, dtype=np.float64)], axis=1)
    return ad.sigmoid(mlp.forward(tape, x))


def decode_app_nocoord(tape: Tape, mlp: Mlp, f_app) -> Var:
    """Coordinate-free appearance decoding; the ablation baseline."""
    return ad.sigmoid(mlp.forward(tape, f_app))
