"""Small recurrent predictor: scalar embedding -> GRU -> attention read-out.

Predicts the next value of a normalized series from a fixed window of
previous values.  Everything is hand-written numpy in double precision:
forward, backpropagation (verified against central finite differences via
:func:`gradient_check`), and RMSProp updates.  Training is deterministic
for a fixed config seed; batch reductions happen in a fixed order.

The trained model rolls each spatial pillar forward from a seed window of
sanitized values to fill the pattern matrix.  That generation step only
ever touches sanitized inputs, so it charges no privacy budget.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .matrix import ConsumptionMatrix, GridSpec
from .quadtree import TrainingSample


@dataclass(frozen=True)
class ModelConfig:
    window: int = 6
    embed_dim: int = 128
    hidden_dim: int = 64
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if min(self.window, self.embed_dim, self.hidden_dim, self.epochs, self.batch_size) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


# parameter arrays in declared (checkpoint) order
PARAM_FIELDS = (
    "w_embed", "b_embed",
    "w_z", "w_r", "w_h",
    "u_z", "u_r", "u_h",
    "b_z", "b_r", "b_h",
    "w_query", "w_key",
    "w_out", "b_out",
)


@dataclass
class ModelParams:
    """All trainable arrays; shapes follow (embed_dim E, hidden_dim H).

    w_embed/b_embed lift the scalar input to E dims; w_*/u_*/b_* are the
    GRU update (z), reset (r), and candidate (h) gates; w_query/w_key
    project hidden states for the dot-product attention; w_out/b_out are
    the affine head.
    """

    w_embed: np.ndarray  # (E,)
    b_embed: np.ndarray  # (E,)
    w_z: np.ndarray      # (E, H)
    w_r: np.ndarray      # (E, H)
    w_h: np.ndarray      # (E, H)
    u_z: np.ndarray      # (H, H)
    u_r: np.ndarray      # (H, H)
    u_h: np.ndarray      # (H, H)
    b_z: np.ndarray      # (H,)
    b_r: np.ndarray      # (H,)
    b_h: np.ndarray      # (H,)
    w_query: np.ndarray  # (H, H)
    w_key: np.ndarray    # (H, H)
    w_out: np.ndarray    # (H,)
    b_out: np.ndarray    # ()

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_FIELDS]

    def copy(self) -> "ModelParams":
        return ModelParams(*[a.copy() for a in self.arrays()])

    @property
    def hidden_dim(self) -> int:
        return self.u_z.shape[0]

    def check_finite(self):
        for name in PARAM_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in parameter {name}")


def init_params(config: ModelConfig) -> ModelParams:
    """Uniform +-1/sqrt(fan_in) weights, zero biases, seeded."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    e, h = config.embed_dim, config.hidden_dim

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        w_embed=uniform((e,), 1),
        b_embed=np.zeros(e),
        w_z=uniform((e, h), e),
        w_r=uniform((e, h), e),
        w_h=uniform((e, h), e),
        u_z=uniform((h, h), h),
        u_r=uniform((h, h), h),
        u_h=uniform((h, h), h),
        b_z=np.zeros(h),
        b_r=np.zeros(h),
        b_h=np.zeros(h),
        w_query=uniform((h, h), h),
        w_key=uniform((h, h), h),
        w_out=uniform((h,), h),
        b_out=np.zeros(()),
    )


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _forward_batch(params: ModelParams, windows: np.ndarray, want_cache: bool = False):
    """Predictions for a (B, ws) batch of windows; optionally the BPTT cache.

    The embedding is folded into per-gate input vectors u_g = w_embed @ w_g
    and offsets c_g = b_embed @ w_g, which is algebraically identical to
    embedding each scalar and multiplying by the gate matrix.
    """
    x = np.asarray(windows, dtype=float)
    if x.ndim != 2:
        raise ValueError("windows must be a (batch, window) array")
    b, ws = x.shape
    h_dim = params.hidden_dim

    u = {g: params.w_embed @ getattr(params, f"w_{g}") for g in "zrh"}
    c = {g: params.b_embed @ getattr(params, f"w_{g}") for g in "zrh"}

    h = np.zeros((b, h_dim))
    hs = np.empty((b, ws, h_dim))
    steps = []
    for t in range(ws):
        xt = x[:, t : t + 1]
        z = _sigmoid(xt * u["z"] + c["z"] + h @ params.u_z + params.b_z)
        r = _sigmoid(xt * u["r"] + c["r"] + h @ params.u_r + params.b_r)
        rh = r * h
        g = np.tanh(xt * u["h"] + c["h"] + rh @ params.u_h + params.b_h)
        h_new = z * h + (1.0 - z) * g
        if want_cache:
            steps.append((h, z, r, g, rh))
        h = h_new
        hs[:, t] = h

    scale = 1.0 / math.sqrt(h_dim)
    q = h @ params.w_query
    keys = hs @ params.w_key
    scores = np.einsum("bh,bwh->bw", q, keys) * scale
    scores_shift = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(scores_shift)
    alpha = expd / expd.sum(axis=1, keepdims=True)
    ctx = np.einsum("bw,bwh->bh", alpha, hs)
    pred = ctx @ params.w_out + params.b_out

    if not want_cache:
        return pred
    cache = {
        "x": x, "u": u, "steps": steps, "hs": hs, "q": q, "keys": keys,
        "alpha": alpha, "ctx": ctx, "scale": scale,
    }
    return pred, cache


def forward(params: ModelParams, window) -> float:
    """Deterministic scalar prediction for one window."""
    window = np.asarray(window, dtype=float)
    if not np.all(np.isfinite(window)):
        raise ValueError("window contains non-finite values")
    return float(_forward_batch(params, window[None, :])[0])


def _zero_grads(params: ModelParams) -> ModelParams:
    return ModelParams(*[np.zeros_like(a) for a in params.arrays()])


def _backward_batch(params: ModelParams, cache: dict, dpred: np.ndarray) -> ModelParams:
    """Gradients of sum(dpred * pred) w.r.t. every parameter array."""
    x, u, steps, hs = cache["x"], cache["u"], cache["steps"], cache["hs"]
    alpha, ctx, q, keys, scale = cache["alpha"], cache["ctx"], cache["q"], cache["keys"], cache["scale"]
    b, ws = x.shape
    grads = _zero_grads(params)

    grads.w_out += ctx.T @ dpred
    grads.b_out += dpred.sum()
    dctx = dpred[:, None] * params.w_out[None, :]

    # attention: ctx = sum_t alpha_t h_t, alpha = softmax(q . k_t / sqrt(H))
    dalpha = np.einsum("bh,bwh->bw", dctx, hs)
    dhs = alpha[:, :, None] * dctx[:, None, :]
    dscores = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
    dq = np.einsum("bw,bwh->bh", dscores, keys) * scale
    dkeys = dscores[:, :, None] * q[:, None, :] * scale
    h_last = hs[:, -1]
    grads.w_query += h_last.T @ dq
    grads.w_key += hs.reshape(b * ws, -1).T @ dkeys.reshape(b * ws, -1)
    dhs += dkeys @ params.w_key.T
    dhs[:, -1] += dq @ params.w_query.T

    # BPTT through h_t = z h_{t-1} + (1 - z) g
    du = {g: np.zeros_like(u[g]) for g in "zrh"}
    dc = {g: np.zeros_like(u[g]) for g in "zrh"}
    dh = np.zeros((b, params.hidden_dim))
    for t in range(ws - 1, -1, -1):
        h_prev, z, r, g, rh = steps[t]
        dh = dh + dhs[:, t]
        xt = x[:, t]
        dz = dh * (h_prev - g)
        dg = dh * (1.0 - z)
        dh_prev = dh * z

        dpre_g = dg * (1.0 - g * g)
        du["h"] += xt @ dpre_g
        dc["h"] += dpre_g.sum(axis=0)
        grads.b_h += dpre_g.sum(axis=0)
        grads.u_h += rh.T @ dpre_g
        drh = dpre_g @ params.u_h.T
        dh_prev += drh * r
        dr = drh * h_prev

        dpre_r = dr * r * (1.0 - r)
        du["r"] += xt @ dpre_r
        dc["r"] += dpre_r.sum(axis=0)
        grads.b_r += dpre_r.sum(axis=0)
        grads.u_r += h_prev.T @ dpre_r
        dh_prev += dpre_r @ params.u_r.T

        dpre_z = dz * z * (1.0 - z)
        du["z"] += xt @ dpre_z
        dc["z"] += dpre_z.sum(axis=0)
        grads.b_z += dpre_z.sum(axis=0)
        grads.u_z += h_prev.T @ dpre_z
        dh_prev += dpre_z @ params.u_z.T

        dh = dh_prev

    # unfold u_g = w_embed @ w_g and c_g = b_embed @ w_g
    for g in "zrh":
        w_g = getattr(params, f"w_{g}")
        grad_w_g = getattr(grads, f"w_{g}")
        grad_w_g += np.outer(params.w_embed, du[g]) + np.outer(params.b_embed, dc[g])
        grads.w_embed += w_g @ du[g]
        grads.b_embed += w_g @ dc[g]
    return grads


def mse_loss(params: ModelParams, samples: list[TrainingSample]) -> float:
    """Mean squared prediction error over a sample list."""
    windows = np.stack([s.window for s in samples])
    targets = np.array([s.target for s in samples])
    pred = _forward_batch(params, windows)
    return float(np.mean((pred - targets) ** 2))


def train(samples: list[TrainingSample], config: ModelConfig, on_epoch=None) -> ModelParams:
    """Mini-batch RMSProp on mean squared error.

    Sample order is reshuffled each epoch from the config seed, so the
    whole parameter trajectory is reproducible.  ``on_epoch(epoch, loss)``
    is invoked with each epoch's mean training loss.
    """
    if not samples:
        raise ValueError("cannot train on an empty sample set")
    windows = np.stack([s.window for s in samples])
    targets = np.array([s.target for s in samples])
    if not (np.all(np.isfinite(windows)) and np.all(np.isfinite(targets))):
        raise ValueError("training samples contain non-finite values")
    if windows.shape[1] != config.window:
        raise ValueError(f"samples have window {windows.shape[1]}, config says {config.window}")

    params = init_params(config)
    square_avg = _zero_grads(params)
    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, 1))))
    n = len(samples)

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = windows[idx], targets[idx]
            pred, cache = _forward_batch(params, xb, want_cache=True)
            err = pred - yb
            epoch_loss += float(err @ err)
            grads = _backward_batch(params, cache, 2.0 * err / len(idx))
            for p_arr, g_arr, v_arr in zip(params.arrays(), grads.arrays(), square_avg.arrays()):
                v_arr *= config.rms_decay
                v_arr += (1.0 - config.rms_decay) * g_arr * g_arr
                p_arr -= config.learning_rate * g_arr / (np.sqrt(v_arr) + config.rms_eps)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss / n)
    params.check_finite()
    return params


def gradient_check(params: ModelParams, sample: TrainingSample, step: float = 1e-5) -> float:
    """Max relative disagreement between backprop and central differences.

    Loss is the squared error on one sample; every scalar parameter is
    perturbed by +-step.
    """
    window = np.asarray(sample.window, dtype=float)[None, :]
    target = sample.target

    pred, cache = _forward_batch(params, window, want_cache=True)
    analytic = _backward_batch(params, cache, 2.0 * (pred - target))

    worst = 0.0
    for name in PARAM_FIELDS:
        arr = getattr(params, name)
        g_arr = np.atleast_1d(getattr(analytic, name))
        flat = np.atleast_1d(arr).reshape(-1)
        g_flat = g_arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float((_forward_batch(params, window)[0] - target) ** 2)
            flat[i] = orig - step
            down = float((_forward_batch(params, window)[0] - target) ** 2)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(g_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(g_flat[i] - numeric) / denom)
    return worst


def generate_pattern_matrix(params: ModelParams, sanitized_prefix: ConsumptionMatrix,
                            grid: GridSpec, horizon: int, ws: int = 6) -> ConsumptionMatrix:
    """Fill a (c_x, c_y, horizon) pattern matrix from sanitized data only.

    The training-prefix steps are copied from the sanitized prefix; later
    steps are generated per pillar by repeatedly predicting the next value
    from the trailing window.  Outputs are clamped to [0, 1].  Consumes no
    budget: everything it reads is already sanitized (post-processing).
    """
    if sanitized_prefix.provenance != "sanitized":
        raise ValueError(f"prefix must be sanitized, got provenance {sanitized_prefix.provenance!r}")
    t_train = sanitized_prefix.grid.c_t
    if sanitized_prefix.grid.c_x != grid.c_x or sanitized_prefix.grid.c_y != grid.c_y:
        raise ValueError("prefix grid does not match target grid")
    if horizon < t_train:
        raise ValueError(f"horizon {horizon} shorter than training prefix {t_train}")
    if t_train < ws:
        raise ValueError(f"missing seed window: prefix {t_train} shorter than window {ws}")

    n_pillars = grid.c_x * grid.c_y
    series = np.empty((n_pillars, horizon))
    series[:, :t_train] = sanitized_prefix.cells.reshape(n_pillars, t_train)
    for t in range(t_train, horizon):
        pred = _forward_batch(params, series[:, t - ws : t])
        series[:, t] = np.clip(pred, 0.0, 1.0)
    cells = series.reshape(grid.c_x, grid.c_y, horizon)
    return ConsumptionMatrix(GridSpec(grid.c_x, grid.c_y, horizon), cells, "pattern")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"PGRNN1\n"


def save_checkpoint(params: ModelParams, config: ModelConfig, path):
    """Flat binary: magic, then per array ndim / dims / float64 data, in
    declared order; config and seed go to a JSON sidecar."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for arr in params.arrays():
            arr = np.asarray(arr, dtype="<f8")
            fh.write(struct.pack("<q", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<q", dim))
            fh.write(arr.tobytes())
    sidecar = {f.name: getattr(config, f.name) for f in fields(config)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a model checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    arrays = []
    for _ in PARAM_FIELDS:
        (ndim,) = struct.unpack_from("<q", raw, offset)
        offset += 8
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<q", raw, offset)
            offset += 8
            shape.append(dim)
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += 8 * count
        arrays.append(arr)
    config = ModelConfig(**json.loads(Path(str(path) + ".json").read_text()))
    return ModelParams(*arrays), config
