"""Independent reference computations shared by the unit and acceptance tests."""

from __future__ import annotations

from unittest import mock

import numpy as np

from chemtab import model as model_mod
from chemtab import nn
from chemtab.dataset import OutputScaler, fit_scaler
from chemtab.model import (
    Batch,
    ChemTabModel,
    EncoderWeights,
    TrainConfig,
    build_model,
    dynamic_targets,
    joint_loss,
    loss_gradients,
)

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def tiny_instance(seed: int, activation: str = "tanh", s: int = 5, p: int = 2, n: int = 12,
                  with_dynamic: bool = True):
    """A small random model and batch with every loss term switched on."""
    rng = np.random.default_rng(seed)
    names = tuple(f"S{i}" for i in range(s))
    key = names[: 1 + seed % 3]
    cfg = TrainConfig(
        p=p, middle_width=16, key_species=key, activation=activation, dropout=0.1,
        lambda_orth=float(rng.uniform(0.1, 2.0)), lambda_cov=float(rng.uniform(0.1, 2.0)),
        alpha_phy=float(rng.uniform(0.5, 1.5)), alpha_dyn=float(rng.uniform(0.5, 1.5)), seed=seed,
    )
    model = build_model(cfg, s, names, with_dynamic=with_dynamic)
    model.encoder.W[:] = rng.uniform(0.05, 1.0, size=model.encoder.W.shape)
    for _, net in model.networks():
        for layer in net.layers:
            layer.W *= 1.5
            layer.b[:] = rng.normal(scale=0.2, size=layer.b.shape)
    Y = rng.dirichlet(np.ones(s), size=n)
    Sdot = rng.normal(size=(n, s))
    Se = rng.normal(size=n)
    Z = rng.uniform(size=n)
    batch = Batch(Y, Z, Se, Sdot)
    model.scalers["physics"] = fit_scaler("robust", np.column_stack([Se, Sdot[:, model.key_index()]]))
    if with_dynamic:
        model.scalers["dynamic"] = fit_scaler("minmax", Sdot @ model.encoder.W)
    return model, batch


def perfect_linear_case(alpha_phy=1.3, alpha_dyn=0.7):
    """Batch where Cpv and Zmix are exactly uncorrelated and all targets are linear in them."""
    a = np.array([1.0, -1, 1, -1])
    b = np.array([1.0, 1, -1, -1])
    c = np.array([1.0, -1, -1, 1])
    y1, y2 = 0.25 + 0.1 * a, 0.25 + 0.1 * b
    Y = np.column_stack([y1, y2, (1 - y1 - y2) / 2, (1 - y1 - y2) / 2])
    Z = 0.5 + 0.2 * c
    X = np.column_stack([y1, y2, Z])
    se_coef = np.array([1.0, 0.5, -1.0])
    key_coef = np.array([0.3, -0.1, 0.6])
    A_dyn = np.array([[2.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
    Se = X @ se_coef
    Sdot = np.zeros((4, 4))
    Sdot[:, :2] = X @ A_dyn  # the encoder picks species 0 and 1, so these are the dynamic targets
    Sdot[:, 2] = X @ key_coef
    cfg = TrainConfig(p=2, middle_width=16, key_species=("S2",), alpha_phy=alpha_phy, alpha_dyn=alpha_dyn,
                      lambda_orth=1.0, lambda_cov=1.0)
    W = np.zeros((4, 2))
    W[0, 0] = W[1, 1] = 1.0
    phys_A = np.column_stack([se_coef, key_coef])
    physics = nn.MlpNetwork([nn.Layer(phys_A.T, np.zeros(2), "linear")])
    dyn = nn.MlpNetwork([nn.Layer(A_dyn.T, np.zeros(2), "linear")])
    scalers = {"physics": OutputScaler.identity(2), "dynamic": OutputScaler.identity(2)}
    m = ChemTabModel(EncoderWeights(W, ("S0", "S1", "S2", "S3")), physics, dyn, scalers, ("S2",), cfg)
    return m, Batch(Y, Z, Se, Sdot)


# ---------------------------------------------------------------------------
# direct transcription of the joint loss


def _act(kind, z):
    # branches follow the real part so the same code runs on complex-step inputs
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.where(z.real > 0, z, 0.0)
    if kind == "selu":
        return SELU_SCALE * np.where(z.real > 0, z, SELU_ALPHA * (np.exp(z) - 1.0))
    return z


def _mlp(net, x):
    h = x
    for layer in net.layers:
        h = _act(layer.activation, np.einsum("ij,nj->ni", layer.W, h) + layer.b)
    return h


def _r2(t, y):
    out = []
    for c in range(t.shape[1]):
        res = sum((t[i, c] - y[i, c]) ** 2 for i in range(t.shape[0]))
        mean = sum(t[:, c]) / t.shape[0]
        tot = sum((t[i, c] - mean) ** 2 for i in range(t.shape[0]))
        out.append(1.0 - res / (tot if tot.real > 1e-12 else 1e-12))
    return np.array(out)


def _corr(X):
    if not np.iscomplexobj(X):
        return np.corrcoef(X, rowvar=False)
    Xc = X - X.mean(0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    d = np.sqrt(np.diag(cov))
    return cov / np.outer(d, d)


def reference_loss(model, batch, dyn_targets=None):
    """-(a1 mean R2_phys + a2 mean R2_dyn) + l_orth ||W'W - I||^2 + l_cov sum_{i!=j} corr_ij^2.

    ``dyn_targets`` overrides Sdot @ W for the dynamic regressor's targets.
    Parameters may be complex, in which case the complex loss is returned.
    """
    cfg = model.config
    W = model.encoder.W
    X = np.hstack([batch.Y @ W, batch.Zmix[:, None]])
    phys_raw = np.hstack([batch.Se[:, None], batch.Sdot[:, model.key_index()]])
    sc = model.scalers["physics"]
    phys_t = (phys_raw - sc.center) / sc.scale
    total = -cfg.alpha_phy * _r2(phys_t, _mlp(model.physics_reg, X)).mean()
    if model.dyn_reg is not None:
        sd = model.scalers["dynamic"]
        raw = batch.Sdot @ W if dyn_targets is None else dyn_targets
        dyn_t = (raw - sd.center) / sd.scale
        total -= cfg.alpha_dyn * _r2(dyn_t, _mlp(model.dyn_reg, X)).mean()
    G = W.T @ W - np.eye(W.shape[1])
    total += cfg.lambda_orth * np.sum(G**2)
    C = _corr(X)
    total += cfg.lambda_cov * (np.sum(C**2) - np.sum(np.diag(C) ** 2))
    return total if np.iscomplexobj(total) else float(total)


# ---------------------------------------------------------------------------
# finite-difference gradient check


def _blocks(model):
    out = []
    for tag, net in model.networks():
        for name, p in zip(net.param_names(tag + "."), net.params()):
            out.append((tag, name, p))
    if model.encoder_net is None:
        out.append(("encoder", "encoder.W", model.encoder.W))
    return out


LOSS_TERMS = ("loss_phy", "loss_dyn", "pen_orth", "pen_cov")


def gradient_errors(model, batch, h: float = 1e-5) -> dict[str, float]:
    """Relative error ||g - fd|| / max(||g||, ||fd||) per parameter block.

    ``fd`` sums central differences of the individual loss terms. Differencing
    the total instead would cancel against terms the parameter does not touch,
    and on untrained instances those can be 25x larger than the rest. The step
    stays small because SELU's derivative jumps at zero and a step that
    crosses the kink ruins the estimate.

    The dynamic targets are held at their value for the unperturbed encoder,
    which is the lagged-target convention the analytic gradient follows.
    """
    _, _, grads = loss_gradients(model, batch)
    frozen = dynamic_targets(model.encoder.W, batch.Sdot)
    analytic = {}
    for tag, net in model.networks():
        for name, g in zip(net.param_names(tag + "."), grads[tag]):
            analytic[name] = g
    if model.encoder_net is None:
        analytic["encoder.W"] = grads["encoder"]

    errors = {}
    with mock.patch.object(model_mod, "dynamic_targets", lambda W, Sdot: frozen):
        for _, name, p in _blocks(model):
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = joint_loss(model, batch)[1]
                p[idx] = old - h
                dn = joint_loss(model, batch)[1]
                p[idx] = old
                fd[idx] = sum((up[term] - dn[term]) / (2 * h) for term in LOSS_TERMS)
            g = analytic[name]
            denom = max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
            errors[name] = float(np.linalg.norm(g - fd) / denom)
    return errors


def complex_step_errors(model, batch, h: float = 1e-30) -> dict[str, float]:
    """Relative gradient error per block against complex-step derivatives.

    Im L(x + ih) / h has no subtractive cancellation and, since every branch
    is chosen on the real part, never straddles an activation kink. The loss
    comes from :func:`reference_loss`, not from the library, with the dynamic
    targets frozen at the unperturbed encoder.
    """
    _, _, grads = loss_gradients(model, batch)
    frozen = dynamic_targets(model.encoder.W, batch.Sdot) if model.dyn_reg is not None else None
    analytic = {}
    for tag, net in model.networks():
        for name, g in zip(net.param_names(tag + "."), grads[tag]):
            analytic[name] = g

    holders = [(layer, attr) for _, net in model.networks() for layer in net.layers for attr in ("W", "b")]
    saved = [getattr(obj, attr) for obj, attr in holders]
    saved_W = model.encoder.W
    errors = {}
    try:
        for obj, attr in holders:
            setattr(obj, attr, getattr(obj, attr).astype(np.complex128))
        model.encoder.W = saved_W.astype(np.complex128)
        blocks = [(name, getattr(layer, attr))
                  for tag, net in model.networks()
                  for name, (layer, attr) in zip(net.param_names(tag + "."),
                                                 [(l, a) for l in net.layers for a in ("W", "b")])]
        if model.encoder_net is None:
            analytic["encoder.W"] = grads["encoder"]
            blocks.append(("encoder.W", model.encoder.W))
        for name, p in blocks:
            cs = np.zeros(p.shape)
            for idx in np.ndindex(p.shape):
                p[idx] += 1j * h
                cs[idx] = reference_loss(model, batch, frozen).imag / h
                p[idx] -= 1j * h
            g = analytic[name]
            denom = max(np.linalg.norm(g), np.linalg.norm(cs), 1e-300)
            errors[name] = float(np.linalg.norm(g - cs) / denom)
    finally:
        for (obj, attr), value in zip(holders, saved):
            setattr(obj, attr, value)
        model.encoder.W = saved_W
    return errors

# ---------------------------------------------------------------------------
# principal subspace without an SVD


def power_iteration_pca(Y, p, iters=5000):
    """Leading eigenvectors of the sample covariance by power iteration with deflation."""
    Yc = Y - Y.mean(0)
    C = Yc.T @ Yc / (Y.shape[0] - 1)
    rng = np.random.default_rng(123)
    vecs = []
    for _ in range(p):
        v = rng.normal(size=C.shape[0])
        for _ in range(iters):
            for u in vecs:
                v -= (u @ v) * u
            v = C @ v
            v /= np.linalg.norm(v)
        vecs.append(v)
    return np.column_stack(vecs)


def reconstruction_error(Y, V):
    Yc = Y - Y.mean(0)
    R = Yc - Yc @ V @ V.T
    return float((R * R).sum(1).mean())
