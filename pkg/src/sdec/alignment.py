"""Affine head aligning unimodal embeddings with the multimodal space.

The head is trained with an in-batch distillation objective combining two
cross-entropy terms, both over cosine-similarity softmax distributions:

  * self-distillation: the student's similarity distribution against the
    multimodal image embeddings should match the teacher's own
    (temperature tau_t) similarity distribution;
  * cross-modal constraint: the student should score its matching text
    embedding highest (one-hot target).

Gradients are closed-form; the optimizer is plain gradient descent with
linear warm-up and cosine decay, which keeps runs bit-reproducible for a
fixed seed.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .store import EmbeddingFormatError, _Cursor

HEAD_MAGIC = b"SDAH"
HEAD_VERSION = 1

_NORM_EPS = 1e-12


@dataclass(frozen=True)
class AlignmentHead:
    """Affine map W x + bias from the unimodal to the multimodal space."""

    W: np.ndarray
    bias: np.ndarray
    tau_s: float = 0.1
    tau_t: float = 0.05

    def __post_init__(self) -> None:
        W = np.ascontiguousarray(self.W, dtype=np.float64)
        b = np.ascontiguousarray(self.bias, dtype=np.float64)
        if W.ndim != 2:
            raise ValueError(f"W must be 2-D, got shape {W.shape}")
        if b.shape != (W.shape[0],):
            raise ValueError(f"bias shape {b.shape} does not match W rows {W.shape[0]}")
        if not (np.isfinite(W).all() and np.isfinite(b).all()):
            raise ValueError("head parameters must be finite")
        if self.tau_s <= 0 or self.tau_t <= 0:
            raise ValueError("temperatures must be positive")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "bias", b)

    @property
    def dim_in(self) -> int:
        return self.W.shape[1]

    @property
    def dim_out(self) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim_in,):
            raise ValueError(f"input has shape {x.shape}, head expects ({self.dim_in},)")
        if not np.isfinite(x).all():
            raise ValueError("input must be finite")
        return self.W @ x + self.bias

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim_in:
            raise ValueError(
                f"batch has shape {x.shape}, head expects (n, {self.dim_in})"
            )
        return x @ self.W.T + self.bias


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 4096
    seed: int = 0
    tau_s: float = 0.1
    tau_t: float = 0.05
    warmup_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch targets)")
        if self.tau_s <= 0 or self.tau_t <= 0:
            raise ValueError("temperatures must be positive")
        if not (0.0 <= self.warmup_fraction <= 1.0):
            raise ValueError("warmup_fraction must lie in [0, 1]")


def _unit_rows(mat: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(mat, axis=1)
    if (norms < _NORM_EPS).any():
        bad = int(np.flatnonzero(norms < _NORM_EPS)[0])
        raise ValueError(f"{name} row {bad} has zero norm")
    return mat / norms[:, None], norms


def _softmax_pair(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (softmax, log-softmax) sharing one exponential pass."""
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    return e / s, shifted - np.log(s)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    return _softmax_pair(z)[1]


def alignment_loss(
    student: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray | None,
    tau_s: float,
    tau_t: float,
) -> float:
    """Mean distillation + cross-modal cross-entropy over an in-batch softmax.

    ``student`` rows are the mapped unimodal embeddings; both teacher
    batches live in the multimodal space. When ``teacher_txt`` is None the
    cross-modal term is omitted. Cosine similarity makes the loss invariant
    to positive rescaling of any row.
    """
    student = np.asarray(student, dtype=np.float64)
    teacher_img = np.asarray(teacher_img, dtype=np.float64)
    n = student.shape[0]
    if n < 2:
        raise ValueError("batch size must be >= 2")
    if teacher_img.shape != student.shape:
        raise ValueError(
            f"teacher_img shape {teacher_img.shape} != student shape {student.shape}"
        )
    u, _ = _unit_rows(student, "student")
    v, _ = _unit_rows(teacher_img, "teacher_img")

    log_p_img = _log_softmax((u @ v.T) / tau_s)
    teacher_dist = np.exp(_log_softmax((v @ v.T) / tau_t))
    loss = -(teacher_dist * log_p_img).sum(axis=1).mean()

    if teacher_txt is not None:
        teacher_txt = np.asarray(teacher_txt, dtype=np.float64)
        if teacher_txt.shape != student.shape:
            raise ValueError(
                f"teacher_txt shape {teacher_txt.shape} != student shape {student.shape}"
            )
        w, _ = _unit_rows(teacher_txt, "teacher_txt")
        log_p_txt = _log_softmax((u @ w.T) / tau_s)
        loss += -np.diagonal(log_p_txt).mean()
    return float(loss)


def _prepare_teachers(
    teacher_img: np.ndarray, teacher_txt: np.ndarray | None, tau_t: float
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Normalize teacher rows and fix the (constant) teacher distribution."""
    v, _ = _unit_rows(np.asarray(teacher_img, dtype=np.float64), "teacher_img")
    w = None
    if teacher_txt is not None:
        w, _ = _unit_rows(np.asarray(teacher_txt, dtype=np.float64), "teacher_txt")
        if w.shape != v.shape:
            raise ValueError(f"teacher_txt shape {w.shape} != teacher_img shape {v.shape}")
    teacher_dist, _ = _softmax_pair((v @ v.T) / tau_t)
    return v, w, teacher_dist


def _core_loss_grad(
    W: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    v: np.ndarray,
    w: np.ndarray | None,
    teacher_dist: np.ndarray,
    tau_s: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus closed-form dL/dW and dL/dbias.

    With s_i = W x_i + b, u_i = s_i/|s_i| and per-pair similarity
    S_ij = u_i . v_j, the chain rule through the cosine gives

        dL/ds_i = (sum_j G_ij (v_j - S_ij u_i)) / |s_i|

    where G = (P - target)/(B tau_s) is the usual softmax cross-entropy
    gradient on the similarity logits.
    """
    n = x.shape[0]
    s_hat = x @ W.T + b
    u, s_norms = _unit_rows(s_hat, "student")
    if v.shape != u.shape:
        raise ValueError(f"teacher_img shape {v.shape} != student shape {u.shape}")

    sims_img = u @ v.T
    p_img, log_p_img = _softmax_pair(sims_img / tau_s)
    loss = -(teacher_dist * log_p_img).sum(axis=1).mean()

    g_logits = (p_img - teacher_dist) / (n * tau_s)
    # dL/du before removing the radial component
    du = g_logits @ v
    radial = np.einsum("ij,ij->i", g_logits, sims_img)

    if w is not None:
        sims_txt = u @ w.T
        g_txt, log_p_txt = _softmax_pair(sims_txt / tau_s)
        loss += -np.diagonal(log_p_txt).mean()
        g_txt[np.arange(n), np.arange(n)] -= 1.0
        g_txt /= n * tau_s
        du += g_txt @ w
        radial += np.einsum("ij,ij->i", g_txt, sims_txt)

    g_s = (du - radial[:, None] * u) / s_norms[:, None]
    grad_w = g_s.T @ x
    grad_b = g_s.sum(axis=0)
    return float(loss), grad_w, grad_b


def _loss_and_grad(
    head: AlignmentHead,
    x: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray | None,
    tau_s: float,
    tau_t: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("batch size must be >= 2")
    v, w, teacher_dist = _prepare_teachers(teacher_img, teacher_txt, tau_t)
    return _core_loss_grad(head.W, head.bias, x, v, w, teacher_dist, tau_s)


def loss_gradient(
    head: AlignmentHead,
    x: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray | None,
    tau_s: float | None = None,
    tau_t: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (dL/dW, dL/dbias) for the batch; temperatures default to the head's."""
    _, gw, gb = _loss_and_grad(
        head,
        x,
        teacher_img,
        teacher_txt,
        head.tau_s if tau_s is None else tau_s,
        head.tau_t if tau_t is None else tau_t,
    )
    return gw, gb


def init_head(dim_in: int, dim_out: int, seed: int, tau_s: float, tau_t: float) -> AlignmentHead:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((dim_out, dim_in)) / math.sqrt(dim_in)
    return AlignmentHead(W=w, bias=np.zeros(dim_out), tau_s=tau_s, tau_t=tau_t)


def lr_at_step(base_lr: float, step: int, total_steps: int, warmup_fraction: float) -> float:
    """Linear warm-up to base_lr, then cosine decay to zero."""
    warmup = int(round(warmup_fraction * total_steps))
    if step < warmup:
        return base_lr * (step + 1) / warmup
    remaining = max(1, total_steps - warmup)
    progress = (step - warmup) / remaining
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def train_alignment(
    student_inputs: np.ndarray,
    teacher_img: np.ndarray,
    teacher_txt: np.ndarray | None,
    config: TrainConfig,
) -> tuple[AlignmentHead, list[float]]:
    """Train the affine head by seeded gradient descent.

    Returns the trained head and the per-epoch mean loss (recorded before
    each update, so a full-batch run's curve is the exact descent path).
    Same config and seed give bit-identical results: shuffle order and the
    reduction order inside each step are fixed.
    """
    x = np.asarray(student_inputs, dtype=np.float64)
    t_img = np.asarray(teacher_img, dtype=np.float64)
    t_txt = None if teacher_txt is None else np.asarray(teacher_txt, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 training rows")
    if not (np.isfinite(x).all() and np.isfinite(t_img).all()):
        raise ValueError("training vectors must be finite")

    rng = np.random.default_rng(config.seed)
    head = init_head(x.shape[1], t_img.shape[1], config.seed, config.tau_s, config.tau_t)
    W = head.W.copy()
    b = head.bias.copy()

    batch = min(config.batch_size, n)
    steps_per_epoch = max(1, sum(1 for s in range(0, n, batch) if min(n, s + batch) - s >= 2))
    total_steps = config.epochs * steps_per_epoch
    full_batch = batch >= n
    if full_batch:  # teachers and their distribution are loop constants
        v_all, w_all, dist_all = _prepare_teachers(t_img, t_txt, config.tau_t)

    curve: list[float] = []
    step = 0
    for epoch in range(config.epochs):
        epoch_loss = 0.0
        epoch_items = 0
        if full_batch:
            chunks = [np.arange(n)]
        else:
            perm = rng.permutation(n)
            chunks = [perm[s : s + batch] for s in range(0, n, batch)]
        for idx in chunks:
            if idx.size < 2:
                continue  # a 1-row tail has no in-batch candidates
            if full_batch:
                v, w, dist = v_all, w_all, dist_all
            else:
                v, w, dist = _prepare_teachers(
                    t_img[idx],
                    None if t_txt is None else t_txt[idx],
                    config.tau_t,
                )
            loss, gw, gb = _core_loss_grad(W, b, x[idx], v, w, dist, config.tau_s)
            if not math.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, step {step}: {loss}"
                )
            lr = lr_at_step(config.learning_rate, step, total_steps, config.warmup_fraction)
            W = W - lr * gw
            b = b - lr * gb
            epoch_loss += loss * idx.size
            epoch_items += idx.size
            step += 1
        curve.append(epoch_loss / max(1, epoch_items))
    return AlignmentHead(W, b, config.tau_s, config.tau_t), curve


def save_head(head: AlignmentHead, path: str | Path) -> None:
    """Write the head checkpoint (magic SDAH, versioned, CRC-terminated)."""
    parts = [
        HEAD_MAGIC,
        struct.pack("<HII", HEAD_VERSION, head.dim_in, head.dim_out),
        struct.pack("<dd", head.tau_s, head.tau_t),
        np.ascontiguousarray(head.W, dtype="<f8").tobytes(order="C"),
        np.ascontiguousarray(head.bias, dtype="<f8").tobytes(order="C"),
    ]
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(payload + struct.pack("<I", crc))


def load_head(
    path: str | Path,
    expect_dim_in: int | None = None,
    expect_dim_out: int | None = None,
) -> AlignmentHead:
    buf = Path(path).read_bytes()
    cur = _Cursor(buf)
    magic = cur.take(4, "magic")
    if magic != HEAD_MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {HEAD_MAGIC!r}")
    (version,) = cur.unpack("<H", "version")
    if version != HEAD_VERSION:
        raise EmbeddingFormatError(
            f"unsupported head version {version}, expected {HEAD_VERSION}"
        )
    dim_in, dim_out = cur.unpack("<II", "dims")
    tau_s, tau_t = cur.unpack("<dd", "temperatures")
    w_bytes = cur.take(dim_out * dim_in * 8, "W")
    b_bytes = cur.take(dim_out * 8, "bias")
    (stored_crc,) = cur.unpack("<I", "CRC32")
    if cur.pos != len(buf):
        raise EmbeddingFormatError(
            f"{len(buf) - cur.pos} unexpected trailing bytes after CRC"
        )
    actual = zlib.crc32(buf[:-4]) & 0xFFFFFFFF
    if actual != stored_crc:
        raise EmbeddingFormatError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual:#010x}"
        )
    if expect_dim_in is not None and dim_in != expect_dim_in:
        raise EmbeddingFormatError(
            f"head dim_in is {dim_in} but the caller expects {expect_dim_in}"
        )
    if expect_dim_out is not None and dim_out != expect_dim_out:
        raise EmbeddingFormatError(
            f"head dim_out is {dim_out} but the caller expects {expect_dim_out}"
        )
    w = np.frombuffer(w_bytes, dtype="<f8").reshape(dim_out, dim_in)
    bias = np.frombuffer(b_bytes, dtype="<f8")
    try:
        return AlignmentHead(W=w, bias=bias, tau_s=tau_s, tau_t=tau_t)
    except ValueError as e:
        raise EmbeddingFormatError(f"file decodes to an invalid head: {e}") from e
