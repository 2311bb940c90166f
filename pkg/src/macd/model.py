"""Masked adversarial deconvolution network: parameters, the two training
objectives, the alternating training loop and inference."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import NumericalError, ValidationError
from .expr_data import ExpressionMatrix
from .metrics import ProportionMatrix
from .nn_kernel import (
    AdamState,
    BatchNorm,
    DenseLayer,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    grl_backward,
    grl_forward,
    leaky_relu,
    leaky_relu_backward,
    masked_mse,
    masked_mse_backward,
    sigmoid_bce,
    softmax_backward,
    softmax_rows,
)
from .pseudospot_sim import SimulatedST

log = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-5
CONVERGENCE_PATIENCE = 10

# rng stream tags, combined with the seed as (seed, tag, epoch)
_INIT, _SHUFFLE, _MASK = 0, 1, 2


@dataclass
class MacdConfig:
    latent_dim: int = 256
    encoder_hidden: int = 512
    decoder_hidden: tuple = (512, 512)
    head_hidden: int = 64
    mask_rate: float = 0.3
    lam: float = 0.5
    grl_alpha: float = 1.0
    lr: float = 0.01
    batch_size: int = 2048
    epochs: int = 200
    seed: int = 0
    leaky_slope: float = 0.01
    use_mask: bool = True
    use_adversarial: bool = True
    full_reconstruction: bool = False

    def __post_init__(self):
        self.decoder_hidden = tuple(int(h) for h in self.decoder_hidden)
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValidationError(f"latent_dim must be a positive even integer, got {self.latent_dim}")
        for name in ("encoder_hidden", "head_hidden", "epochs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.batch_size < 2:
            # batch statistics need two rows
            raise ValidationError("batch_size must be at least 2")
        if len(self.decoder_hidden) != 2 or min(self.decoder_hidden) < 1:
            raise ValidationError("decoder_hidden must be two positive integers")
        if not 0 <= self.mask_rate <= 1:
            raise ValidationError("mask_rate must lie in [0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValidationError("lam must lie in [0, 1]")
        if self.grl_alpha < 0:
            raise ValidationError("grl_alpha must be nonnegative")
        if not self.lr > 0:
            raise ValidationError("lr must be positive")
        if not 0 < self.leaky_slope < 1:
            raise ValidationError("leaky_slope must lie in (0, 1)")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class MaskMatrix:
    entries: np.ndarray  # 1.0 where masked
    mask_rate: float


# (kind, parameter prefix) per layer; lrelu has no parameters
STACKS = {
    "encoder": [("dense", "encoder.fc0"), ("bn", "encoder.bn0"), ("lrelu", None), ("dense", "encoder.fc1")],
    "decoder": [
        ("dense", "decoder.fc0"), ("bn", "decoder.bn0"), ("lrelu", None),
        ("dense", "decoder.fc1"), ("bn", "decoder.bn1"), ("lrelu", None),
        ("dense", "decoder.fc2"),
    ],
    "classifier": [("dense", "classifier.fc0"), ("lrelu", None), ("dense", "classifier.fc1")],
    "discriminator": [("dense", "discriminator.fc0"), ("lrelu", None), ("dense", "discriminator.fc1")],
    "predictor": [("dense", "predictor.fc0"), ("bn", "predictor.bn0"), ("lrelu", None), ("dense", "predictor.fc1")],
}
STAGE1_MODULES = ("encoder", "decoder", "classifier", "discriminator")
STAGE2_MODULES = ("encoder", "predictor")


class MacdParams:
    """Learnable arrays plus batch-norm running statistics, keyed by dotted name
    (``encoder.fc0.W``, ``encoder.bn0.running_mean``, ...)."""

    def __init__(self, arrays, buffers, bn_eps=1e-5, bn_momentum=0.1):
        self.arrays = dict(arrays)
        self.buffers = dict(buffers)
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum

    @classmethod
    def init(cls, n_genes, n_types, cfg: MacdConfig, rng=None):
        if rng is None:
            rng = np.random.default_rng([cfg.seed, _INIT])
        d, h = cfg.latent_dim, cfg.head_hidden
        dh0, dh1 = cfg.decoder_hidden
        widths = {
            "encoder.fc0": (n_genes, cfg.encoder_hidden), "encoder.fc1": (cfg.encoder_hidden, d),
            "decoder.fc0": (d, dh0), "decoder.fc1": (dh0, dh1), "decoder.fc2": (dh1, n_genes),
            "classifier.fc0": (d // 2, h), "classifier.fc1": (h, 1),
            "discriminator.fc0": (d // 2, h), "discriminator.fc1": (h, 1),
            "predictor.fc0": (d, h), "predictor.fc1": (h, n_types),
        }
        bn_dims = {
            "encoder.bn0": cfg.encoder_hidden, "decoder.bn0": dh0, "decoder.bn1": dh1, "predictor.bn0": h,
        }
        arrays, buffers = {}, {}
        for name, (i, o) in widths.items():
            layer = DenseLayer.init(i, o, rng)
            arrays[f"{name}.W"], arrays[f"{name}.b"] = layer.W, layer.b
        for name, dim in bn_dims.items():
            bn = BatchNorm.init(dim)
            arrays[f"{name}.gamma"], arrays[f"{name}.beta"] = bn.gamma, bn.beta
            buffers[f"{name}.running_mean"], buffers[f"{name}.running_var"] = bn.running_mean, bn.running_var
        return cls(arrays, buffers)

    def dense(self, name):
        return DenseLayer(self.arrays[f"{name}.W"], self.arrays[f"{name}.b"])

    def batchnorm(self, name):
        return BatchNorm(
            self.arrays[f"{name}.gamma"], self.arrays[f"{name}.beta"],
            self.buffers[f"{name}.running_mean"], self.buffers[f"{name}.running_var"],
            self.bn_eps, self.bn_momentum,
        )

    def names_for(self, modules):
        return [k for k in self.arrays if k.split(".", 1)[0] in modules]

    def copy(self):
        return copy.deepcopy(self)


def run_forward(params: MacdParams, stack, X, training, slope=0.01):
    """Forward through one named stack. Returns ``(output, caches)``."""
    caches = []
    for kind, name in STACKS[stack]:
        caches.append(X)
        if kind == "dense":
            X = X @ params.arrays[f"{name}.W"] + params.arrays[f"{name}.b"]
        elif kind == "bn":
            bn = params.batchnorm(name)
            X = batchnorm_forward(bn, X, training)
            params.buffers[f"{name}.running_mean"] = bn.running_mean
            params.buffers[f"{name}.running_var"] = bn.running_var
        else:
            X = leaky_relu(X, slope)
    return X, caches


def _acc(grads, key, g):
    if key in grads:
        grads[key] = grads[key] + g
    else:
        grads[key] = g


def run_backward(params: MacdParams, stack, caches, dY, grads, slope=0.01, input_grad=True):
    """Backprop ``dY`` through a stack, accumulating parameter gradients into
    ``grads``. Returns the gradient w.r.t. the stack input (or None)."""
    layers = STACKS[stack]
    for pos in range(len(layers) - 1, -1, -1):
        kind, name = layers[pos]
        X = caches[pos]
        if kind == "dense":
            layer = params.dense(name)
            _acc(grads, f"{name}.W", X.T @ dY)
            _acc(grads, f"{name}.b", dY.sum(axis=0))
            if pos == 0 and not input_grad:
                return None
            dY = dY @ layer.W.T
        elif kind == "bn":
            dY, dgamma, dbeta = batchnorm_backward(params.batchnorm(name), X, dY)
            _acc(grads, f"{name}.gamma", dgamma)
            _acc(grads, f"{name}.beta", dbeta)
        else:
            dY = leaky_relu_backward(X, dY, slope)
    return dY


def encode(params, X, training=False, slope=0.01):
    return run_forward(params, "encoder", _batch(X, params.arrays["encoder.fc0.W"].shape[0], "encode"), training, slope)[0]


def decode(params, H, training=False, slope=0.01):
    return run_forward(params, "decoder", _batch(H, params.arrays["decoder.fc0.W"].shape[0], "decode"), training, slope)[0]


def _batch(X, width, what):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != width:
        raise ValidationError(f"{what}: expected width {width}, got shape {X.shape}")
    return X


def split_latent(H):
    H = np.asarray(H)
    d = H.shape[-1]
    if d % 2:
        raise ValidationError(f"latent width must be even, got {d}")
    return H[..., : d // 2], H[..., d // 2 :]


def mask_count(rho, n_genes):
    # half-up rounding, so 0.5 -> 1 rather than banker's 0
    return int(math.floor(rho * n_genes + 0.5))


def mask_array(n_rows, n_genes, rho, rng):
    """Binary mask with exactly ``round(rho * n_genes)`` ones per row."""
    k = mask_count(rho, n_genes)
    M = np.zeros((n_rows, n_genes))
    if k == 0 or n_rows == 0:
        return M
    # the k smallest of iid uniforms per row form a uniform random k-subset
    keys = rng.random((n_rows, n_genes))
    cols = np.argpartition(keys, k - 1, axis=1)[:, :k] if k < n_genes else np.broadcast_to(np.arange(n_genes), (n_rows, n_genes))
    np.put_along_axis(M, cols, 1.0, axis=1)
    return M


def apply_mask(X: ExpressionMatrix, rho: float, seed: int = 0, epoch: int = 0):
    """Zero ``round(rho * G)`` uniformly chosen entries per row.

    Returns the masked matrix and the mask (1 = masked). Deterministic in
    ``(seed, epoch)``.
    """
    if not 0 <= rho <= 1:
        raise ValidationError("mask rate must lie in [0, 1]")
    rng = np.random.default_rng([seed, _MASK, epoch])
    M = mask_array(X.values.shape[0], X.values.shape[1], rho, rng)
    masked = np.where(M == 1, 0.0, X.values)
    return ExpressionMatrix(X.row_ids, X.gene_names, masked), MaskMatrix(M, rho)


@dataclass
class Stage1Result:
    loss: float
    terms: dict  # mse, classifier, discriminator
    grads: dict
    mask: np.ndarray
    # per-term encoder gradients, only when requested
    encoder_parts: dict | None = None


def stage1_loss(
    params: MacdParams,
    real_batch,
    sim_batch,
    cfg: MacdConfig,
    mask=None,
    rng=None,
    grl_identity=False,
    split_encoder_grads=False,
) -> Stage1Result:
    """Reconstruction + adversarial objective and its gradients for the
    encoder, decoder, classifier and discriminator.

    ``real_batch`` is the unmasked real data; ``mask`` (1 = masked) is drawn
    from ``rng`` when not given. ``grl_identity`` replaces the gradient
    reversal by an identity (used to check the reversal).
    """
    Xr = np.asarray(real_batch, dtype=np.float64)
    Xs = np.asarray(sim_batch, dtype=np.float64)
    if Xr.ndim != 2 or Xs.ndim != 2 or Xr.shape[1] != Xs.shape[1]:
        raise ValidationError(f"gene count mismatch between real {Xr.shape} and simulated {Xs.shape} batches")
    slope = cfg.leaky_slope
    n, g = Xr.shape

    if cfg.use_mask:
        if mask is None:
            rng = rng if rng is not None else np.random.default_rng([cfg.seed, _MASK])
            mask = mask_array(n, g, cfg.mask_rate, rng)
        mask = np.asarray(mask, dtype=np.float64)
        Xin = np.where(mask == 1, 0.0, Xr)
    else:
        mask = np.zeros_like(Xr)
        Xin = Xr
    loss_mask = mask if (cfg.use_mask and not cfg.full_reconstruction) else np.ones_like(Xr)

    grads = {}
    HR, cache_er = run_forward(params, "encoder", Xin, True, slope)
    Xhat, cache_dec = run_forward(params, "decoder", HR, True, slope)
    l_mse, _ = masked_mse(Xhat, Xr, loss_mask)
    d_xhat = masked_mse_backward(Xhat, Xr, loss_mask)

    if not cfg.use_adversarial:
        dHR = run_backward(params, "decoder", cache_dec, d_xhat, grads, slope)
        run_backward(params, "encoder", cache_er, dHR, grads, slope, input_grad=False)
        parts = {"mse": _encoder_grad(params, cache_er, dHR, slope)} if split_encoder_grads else None
        return Stage1Result(l_mse, {"mse": l_mse, "classifier": 0.0, "discriminator": 0.0}, grads, mask, parts)

    lam = cfg.lam
    HS, cache_es = run_forward(params, "encoder", Xs, True, slope)
    HR1, HR2 = split_latent(HR)
    HS1, HS2 = split_latent(HS)
    ones, zeros = np.ones((HR.shape[0], 1)), np.zeros((HS.shape[0], 1))

    zcr, c_cr = run_forward(params, "classifier", HR1, True, slope)
    zcs, c_cs = run_forward(params, "classifier", HS1, True, slope)
    lcr, dzcr = sigmoid_bce(ones, zcr)
    lcs, dzcs = sigmoid_bce(zeros, zcs)
    l_c = lcr + lcs

    zdr, c_dr = run_forward(params, "discriminator", grl_forward(HR2), True, slope)
    zds, c_ds = run_forward(params, "discriminator", grl_forward(HS2), True, slope)
    ldr, dzdr = sigmoid_bce(ones, zdr)
    lds, dzds = sigmoid_bce(zeros, zds)
    l_d = ldr + lds

    total = lam * l_mse + (1 - lam) * (l_c + l_d)

    w = 1 - lam
    dHR_rec = run_backward(params, "decoder", cache_dec, lam * d_xhat, grads, slope)
    dHR1 = run_backward(params, "classifier", c_cr, w * dzcr, grads, slope)
    dHS1 = run_backward(params, "classifier", c_cs, w * dzcs, grads, slope)
    dHR2 = run_backward(params, "discriminator", c_dr, w * dzdr, grads, slope)
    dHS2 = run_backward(params, "discriminator", c_ds, w * dzds, grads, slope)
    if grl_identity:
        rev_r, rev_s = dHR2, dHS2
    else:
        rev_r, rev_s = grl_backward(dHR2, cfg.grl_alpha), grl_backward(dHS2, cfg.grl_alpha)

    dHR = dHR_rec + np.hstack([dHR1, rev_r])
    dHS = np.hstack([dHS1, rev_s])
    run_backward(params, "encoder", cache_er, dHR, grads, slope, input_grad=False)
    run_backward(params, "encoder", cache_es, dHS, grads, slope, input_grad=False)

    parts = None
    if split_encoder_grads:
        z = np.zeros_like
        parts = {
            "mse": _encoder_grad(params, cache_er, dHR_rec, slope),
            "classifier": _sum_grads(
                _encoder_grad(params, cache_er, np.hstack([dHR1, z(rev_r)]), slope),
                _encoder_grad(params, cache_es, np.hstack([dHS1, z(rev_s)]), slope),
            ),
            "discriminator": _sum_grads(
                _encoder_grad(params, cache_er, np.hstack([z(dHR1), rev_r]), slope),
                _encoder_grad(params, cache_es, np.hstack([z(dHS1), rev_s]), slope),
            ),
        }
    terms = {"mse": l_mse, "classifier": l_c, "discriminator": l_d}
    return Stage1Result(float(total), terms, grads, mask, parts)


def _encoder_grad(params, cache, dH, slope):
    g = {}
    run_backward(params, "encoder", cache, dH, g, slope, input_grad=False)
    return g


def _sum_grads(a, b):
    return {k: a[k] + b[k] for k in a}


def stage2_loss(params: MacdParams, sim_batch, y_true, cfg: MacdConfig):
    """Mean squared error between predicted and true proportions. Returns
    ``(loss, grads)`` for the encoder and predictor."""
    Xs = np.asarray(sim_batch, dtype=np.float64)
    Y_true = np.asarray(y_true, dtype=np.float64)
    n_types = params.arrays["predictor.fc1.W"].shape[1]
    if Y_true.ndim != 2 or Y_true.shape != (Xs.shape[0], n_types):
        raise ValidationError(f"expected proportions of shape {(Xs.shape[0], n_types)}, got {Y_true.shape}")
    slope = cfg.leaky_slope
    H, cache_e = run_forward(params, "encoder", Xs, True, slope)
    Z, cache_p = run_forward(params, "predictor", H, True, slope)
    Y = softmax_rows(Z)
    diff = Y - Y_true
    loss = float(np.mean(diff * diff))
    grads = {}
    dZ = softmax_backward(Y, 2.0 * diff / diff.size)
    dH = run_backward(params, "predictor", cache_p, dZ, grads, slope)
    run_backward(params, "encoder", cache_e, dH, grads, slope, input_grad=False)
    return loss, grads


@dataclass
class TrainedModel:
    params: MacdParams
    config: MacdConfig
    gene_order: list[str]
    type_order: list[str]
    loss_history: list = field(default_factory=list)  # (stage1, stage2) per epoch
    metadata: dict = field(default_factory=dict)


def _paired_batches(n_real, n_sim, batch_size, rng):
    """Shuffled index pairs; the smaller set is cycled to match the larger."""
    n = max(n_real, n_sim)
    perm_r = np.resize(rng.permutation(n_real), n)
    perm_s = np.resize(rng.permutation(n_sim), n)
    out = []
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        if stop - start < 2:
            break
        out.append((perm_r[start:stop], perm_s[start:stop]))
    return out


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[s : s + batch_size] for s in range(0, n, batch_size) if min(s + batch_size, n) - s >= 2]


def train(real_st: ExpressionMatrix, sim: SimulatedST, cfg: MacdConfig, callback=None) -> TrainedModel:
    """Alternate one epoch of the stage-1 objective with one epoch of the
    stage-2 objective until ``cfg.epochs`` or convergence.

    ``callback(epoch, stage1, stage2)`` is called after every epoch.
    """
    Xr = real_st.values
    Xs = sim.expression.values
    Ys = sim.proportions.values
    if Xr.shape[0] < 2 or Xs.shape[0] < 2:
        raise ValidationError("training needs at least two real and two simulated spots")
    if real_st.gene_names != sim.expression.gene_names:
        raise ValidationError("real and simulated matrices must have identical gene order")
    if sim.proportions.spot_ids != sim.expression.row_ids:
        raise ValidationError("simulated proportions and expression rows differ")

    params = MacdParams.init(Xr.shape[1], Ys.shape[1], cfg)
    opt1 = AdamState(lr=cfg.lr)
    opt2 = AdamState(lr=cfg.lr)
    history = []
    calm = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, _SHUFFLE, epoch])
        M = None
        if cfg.use_mask:
            M = mask_array(Xr.shape[0], Xr.shape[1], cfg.mask_rate, np.random.default_rng([cfg.seed, _MASK, epoch]))

        s1 = []
        for b, (ri, si) in enumerate(_paired_batches(Xr.shape[0], Xs.shape[0], cfg.batch_size, rng)):
            res = stage1_loss(params, Xr[ri], Xs[si], cfg, mask=None if M is None else M[ri])
            _check_finite(res.loss, "stage 1", epoch, b)
            adam_step(params.arrays, res.grads, opt1)
            s1.append(res.loss)

        s2 = []
        for b, si in enumerate(_batches(Xs.shape[0], cfg.batch_size, rng)):
            loss, grads = stage2_loss(params, Xs[si], Ys[si], cfg)
            _check_finite(loss, "stage 2", epoch, b)
            adam_step(params.arrays, grads, opt2)
            s2.append(loss)

        row = (float(np.mean(s1)), float(np.mean(s2)))
        log.debug("epoch %d stage1=%.6g stage2=%.6g", epoch + 1, *row)
        if history and abs(row[0] - history[-1][0]) < CONVERGENCE_TOL and abs(row[1] - history[-1][1]) < CONVERGENCE_TOL:
            calm += 1
        else:
            calm = 0
        history.append(row)
        if callback is not None:
            callback(epoch + 1, *row)
        if calm >= CONVERGENCE_PATIENCE:
            log.info("converged after %d epochs", epoch + 1)
            break

    return TrainedModel(params, cfg, list(real_st.gene_names), list(sim.proportions.type_order), history)


def _check_finite(loss, stage, epoch, batch):
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite {stage} loss at epoch {epoch + 1}, batch {batch + 1}")


def predict_array(params: MacdParams, X, cfg: MacdConfig, chunk=4096):
    out = []
    for start in range(0, X.shape[0], chunk):
        H, _ = run_forward(params, "encoder", X[start : start + chunk], False, cfg.leaky_slope)
        Z, _ = run_forward(params, "predictor", H, False, cfg.leaky_slope)
        out.append(softmax_rows(Z))
    return np.vstack(out) if out else np.zeros((0, params.arrays["predictor.fc1.W"].shape[1]))


def predict(model: TrainedModel, X_r: ExpressionMatrix) -> ProportionMatrix:
    """Cell-type proportions for each spot of an (already normalized) matrix.
    Columns are matched to the model's genes by name."""
    present = set(X_r.gene_names)
    missing = [g for g in model.gene_order if g not in present]
    if missing:
        raise ValidationError(f"{len(missing)} model genes missing from input: {', '.join(missing[:20])}")
    X = X_r.take_genes(model.gene_order).values
    Y = predict_array(model.params, X, model.config)
    return ProportionMatrix(X_r.row_ids, model.type_order, Y)
