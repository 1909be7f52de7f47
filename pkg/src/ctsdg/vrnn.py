"""Recurrent latent-variable sequence model.

Per time step: an encoder produces the posterior over a 2-d latent from the
extracted input features and the previous hidden state, a prior network
conditions on the hidden state alone, a decoder reconstructs the 4 input
features from the latent, and a gated recurrent cell advances the 16-d hidden
state. The classification head consumes the final hidden state.

All forward functions are batched: a batch of B sequences flows through as
(B, features) matrices at each step.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import DataError, NumericError, OutputError
from .tensor import Array2, Tape

IN_DIM = 4
FEAT_DIM = 16
Z_DIM = 2
HID_DIM = 16
N_CLASSES = 2
LOG_STD_MIN, LOG_STD_MAX = -10.0, 10.0


def _mlp_shapes(prefix: str, dims: list[int]) -> dict[str, tuple[int, int]]:
    shapes = {}
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        shapes[f"{prefix}.w{i}"] = (a, b)
        shapes[f"{prefix}.b{i}"] = (1, b)
    return shapes


def _gru_shapes(prefix: str, in_dim: int, hid: int) -> dict[str, tuple[int, int]]:
    shapes = {}
    for gate in ("r", "u", "c"):
        shapes[f"{prefix}.wx{gate}"] = (in_dim, hid)
        shapes[f"{prefix}.wh{gate}"] = (hid, hid)
        shapes[f"{prefix}.b{gate}"] = (1, hid)
    return shapes


def vrnn_param_shapes() -> dict[str, tuple[int, int]]:
    shapes = {}
    shapes.update(_mlp_shapes("phi_x", [IN_DIM, FEAT_DIM, FEAT_DIM]))
    shapes.update(_mlp_shapes("phi_z", [Z_DIM, FEAT_DIM, FEAT_DIM]))
    shapes.update(_mlp_shapes("phi_enc", [2 * FEAT_DIM, 16, 16, 2 * Z_DIM]))
    shapes.update(_mlp_shapes("phi_prior", [HID_DIM, 16, 16, 2 * Z_DIM]))
    shapes.update(_mlp_shapes("phi_dec", [2 * FEAT_DIM, 16, 16, 2 * IN_DIM]))
    shapes.update(_gru_shapes("cell", 2 * FEAT_DIM, HID_DIM))
    shapes.update(_mlp_shapes("phi_hyp", [HID_DIM, 16, N_CLASSES]))
    return shapes


ERM_HID = 32  # widened so total parameter counts track the full model


def erm_param_shapes() -> dict[str, tuple[int, int]]:
    shapes = {}
    shapes.update(_mlp_shapes("phi_x", [IN_DIM, FEAT_DIM, FEAT_DIM]))
    shapes.update(_gru_shapes("cell", FEAT_DIM, ERM_HID))
    shapes.update(_mlp_shapes("phi_hyp", [ERM_HID, 16, N_CLASSES]))
    return shapes


def param_count(shapes: dict[str, tuple[int, int]]) -> int:
    return sum(r * c for r, c in shapes.values())


def init_params(rng: np.random.Generator, scale: float = 1.0,
                shapes: dict[str, tuple[int, int]] | None = None) -> dict[str, np.ndarray]:
    """Uniform(-scale/sqrt(fan_in), +scale/sqrt(fan_in)) weights, zero biases."""
    if scale < 0:
        raise DataError("init scale must be >= 0")
    if shapes is None:
        shapes = vrnn_param_shapes()
    params = {}
    for name in sorted(shapes):
        rows, cols = shapes[name]
        if name.split(".")[-1].startswith("b"):
            params[name] = np.zeros((rows, cols))
        else:
            bound = scale / np.sqrt(rows)
            params[name] = rng.uniform(-bound, bound, size=(rows, cols))
    return params


def trace_params(params: dict[str, np.ndarray], tape: Tape) -> dict[str, Array2]:
    return {name: tape.leaf(value) for name, value in params.items()}


def mlp(p: dict[str, Array2], prefix: str, x: Array2, n_layers: int,
        relu_last: bool) -> Array2:
    h = x
    for i in range(n_layers):
        h = h @ p[f"{prefix}.w{i}"] + p[f"{prefix}.b{i}"]
        if i < n_layers - 1 or relu_last:
            h = tn.relu(h)
    return h


def gru_cell(p: dict[str, Array2], prefix: str, x: Array2, h: Array2) -> Array2:
    r = tn.sigmoid(x @ p[f"{prefix}.wxr"] + h @ p[f"{prefix}.whr"] + p[f"{prefix}.br"])
    u = tn.sigmoid(x @ p[f"{prefix}.wxu"] + h @ p[f"{prefix}.whu"] + p[f"{prefix}.bu"])
    c = tn.tanh(x @ p[f"{prefix}.wxc"] + tn.mul(r, h) @ p[f"{prefix}.whc"]
                + p[f"{prefix}.bc"])
    return tn.mul(u, h) + tn.mul(1.0 - u, c)


@dataclass
class DiagGaussian:
    mean: Array2
    log_std: Array2

    def __post_init__(self):
        if self.mean.shape != self.log_std.shape:
            raise NumericError(
                f"mean/log_std shapes differ: {self.mean.shape} vs {self.log_std.shape}")


def _gaussian_head(out: Array2, dim: int) -> DiagGaussian:
    mean = tn.slice_cols(out, 0, dim)
    log_std = tn.clip(tn.slice_cols(out, dim, 2 * dim), LOG_STD_MIN, LOG_STD_MAX)
    return DiagGaussian(mean, log_std)


def reparameterize(g: DiagGaussian, noise: np.ndarray) -> Array2:
    if noise.shape != g.mean.shape:
        raise NumericError(f"noise shape {noise.shape} != mean shape {g.mean.shape}")
    return g.mean + tn.mul(tn.exp(g.log_std), Array2(noise))


def kl_diag(q: DiagGaussian, p: DiagGaussian) -> Array2:
    """Closed-form KL between factorized Gaussians, row-wise, shape (B, 1)."""
    var_q = tn.exp(2.0 * q.log_std)
    var_p = tn.exp(2.0 * p.log_std)
    diff = q.mean - p.mean
    terms = (p.log_std - q.log_std
             + (var_q + tn.mul(diff, diff)) / (2.0 * var_p) - 0.5)
    return tn.sum_rows(terms)


def gaussian_loglik(x: np.ndarray, g: DiagGaussian) -> Array2:
    """Row-wise log N(x; mean, diag(exp(log_std))^2), shape (B, 1)."""
    xc = Array2(x)
    z = (xc - g.mean) / tn.exp(g.log_std)
    terms = -0.5 * np.log(2.0 * np.pi) - g.log_std - 0.5 * tn.mul(z, z)
    return tn.sum_rows(terms)


@dataclass
class VrnnPass:
    posteriors: list[DiagGaussian]
    priors: list[DiagGaussian]
    recons: list[DiagGaussian]
    hiddens: list[Array2]  # h_0 .. h_T
    latents: list[Array2]
    x: np.ndarray  # (B, T, 4) inputs the pass consumed

    @property
    def representation(self) -> Array2:
        return self.hiddens[-1]


def forward_batch(x: np.ndarray, p: dict[str, Array2],
                  noise: np.ndarray | None = None) -> VrnnPass:
    """Run the model over a batch of sequences.

    x: (B, T, 4). noise: (B, T, Z_DIM) standard-normal draws, or None for the
    posterior mean (deterministic inference).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    batch, steps, _ = x.shape
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input sequence")
    if noise is None:
        noise = np.zeros((batch, steps, Z_DIM))
    h = Array2(np.zeros((batch, HID_DIM)))
    posteriors, priors, recons, latents = [], [], [], []
    hiddens = [h]
    for t in range(steps):
        xt = Array2(x[:, t, :])
        feat_x = mlp(p, "phi_x", xt, 2, relu_last=True)
        enc_in = tn.concat_cols([feat_x, h])
        q_t = _gaussian_head(mlp(p, "phi_enc", enc_in, 3, relu_last=False), Z_DIM)
        p_t = _gaussian_head(mlp(p, "phi_prior", h, 3, relu_last=False), Z_DIM)
        z_t = reparameterize(q_t, noise[:, t, :])
        feat_z = mlp(p, "phi_z", z_t, 2, relu_last=True)
        dec_in = tn.concat_cols([feat_z, h])
        r_t = _gaussian_head(mlp(p, "phi_dec", dec_in, 3, relu_last=False), IN_DIM)
        h = gru_cell(p, "cell", tn.concat_cols([feat_x, feat_z]), h)
        if not np.all(np.isfinite(h.value)):
            raise NumericError(f"non-finite hidden state at step {t}")
        posteriors.append(q_t)
        priors.append(p_t)
        recons.append(r_t)
        latents.append(z_t)
        hiddens.append(h)
    return VrnnPass(posteriors, priors, recons, hiddens, latents, x)


def forward_sequence(x: np.ndarray, p: dict[str, Array2],
                     noise: np.ndarray | None = None) -> VrnnPass:
    """Single-sequence convenience wrapper: x is (T, 4)."""
    x = np.asarray(x, dtype=np.float64)
    if noise is not None and noise.ndim == 2:
        noise = noise[None, :, :]
    return forward_batch(x[None, :, :], p, noise)


def elbo(vpass: VrnnPass) -> Array2:
    """Per-sample timestep-wise variational lower bound, shape (B, 1)."""
    total = None
    for t, (q_t, p_t, r_t) in enumerate(zip(vpass.posteriors, vpass.priors,
                                            vpass.recons)):
        term = gaussian_loglik(vpass.x[:, t, :], r_t) - kl_diag(q_t, p_t)
        total = term if total is None else total + term
    return total


def representation(vpass: VrnnPass) -> Array2:
    return vpass.representation


def hypothesis(p: dict[str, Array2], rep: Array2) -> Array2:
    """Causal-feature embedding doubling as classification logits, (B, 2)."""
    return mlp(p, "phi_hyp", rep, 2, relu_last=False)


def erm_forward(x: np.ndarray, p: dict[str, Array2]) -> Array2:
    """Recurrent cross-entropy baseline: feature MLP + GRU + head, (B, 2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None, :, :]
    batch, steps, _ = x.shape
    h = Array2(np.zeros((batch, ERM_HID)))
    for t in range(steps):
        feat = mlp(p, "phi_x", Array2(x[:, t, :]), 2, relu_last=True)
        h = gru_cell(p, "cell", feat, h)
    return mlp(p, "phi_hyp", h, 2, relu_last=False)


def save_params(params: dict[str, np.ndarray], path: str) -> None:
    """Checkpoint: JSON manifest + little-endian float64 blob, bit-exact."""
    names = sorted(params)
    manifest = {"arrays": [{"name": n, "shape": list(params[n].shape)}
                           for n in names]}
    try:
        os.makedirs(path, exist_ok=True)
        blob = b"".join(params[n].astype("<f8").tobytes() for n in names)
        for fname, data in (("manifest.json", json.dumps(manifest, indent=1).encode()),
                            ("params.bin", blob)):
            fd, tmp = tempfile.mkstemp(dir=path)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, os.path.join(path, fname))
    except OSError as e:
        raise OutputError(f"cannot write checkpoint to {path}: {e}") from e


def load_params(path: str) -> dict[str, np.ndarray]:
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        blob = np.fromfile(os.path.join(path, "params.bin"), dtype="<f8")
    except OSError as e:
        raise OutputError(f"cannot read checkpoint from {path}: {e}") from e
    params = {}
    at = 0
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        params[entry["name"]] = blob[at:at + size].reshape(shape).astype(np.float64)
        at += size
    if at != blob.size:
        raise DataError(f"checkpoint blob size mismatch in {path}")
    return params
