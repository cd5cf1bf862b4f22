"""Optimization and orchestration: teacher pretraining, distillation, and
evaluation.

Pretraining minimizes the negated SI-SNR of the masked-and-resynthesized
signal against the clean reference. Distillation freezes the teacher, then
jointly trains the student and the bottleneck adapter on
lambda_kd * cosine_distance(adapted teacher latent, student latent)
+ lambda_out * si_snr_loss, with one Adam instance over both parameter sets.
When lambda_kd == 0 the KD branch (teacher forward, adapter) is skipped
entirely, so such a run is bit-identical to plain supervised training.

Synthesis convention: the model masks the 256-bin magnitude grid; the noisy
Nyquist bin is passed through unmasked so an identity mask reproduces the
noisy input exactly. Early stopping watches the validation loss (L_tot during
KD) with a configured patience and returns the best-validation parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as tt
from .data import MixtureDataset
from .dsp import istft_complex, istft_with_phase, stft
from .errors import ConfigError, NumericsError, ShapeError
from .losses import LossWeights, batched_cosine_distance, si_snr_loss
from .metrics import MetricsReport, sdr, si_sdr, stoi
from .models import build_bottleneck, build_model
from .tensor import Tensor


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 10
    min_delta: float = 1e-4
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    lambda_kd: float = 1.0
    lambda_out: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")

    @property
    def weights(self):
        return LossWeights(self.lambda_kd, self.lambda_out)


class Adam:
    """Adam with bias correction over named parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, (name, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                g = 0.0
            elif not np.all(np.isfinite(g)):
                raise NumericsError(f"non-finite gradient for {name!r} at step {t}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params, optimizer: Adam):
    """Single optimizer step over `params` (grads read from the tensors)."""
    optimizer.step()
    return optimizer


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    noisy_mag: np.ndarray  # (N, T, F)
    phase: np.ndarray  # (N, T, F) complex unit
    nyquist: np.ndarray  # (N, T) complex, passed through unmasked
    clean: np.ndarray  # (N, L)
    noisy: np.ndarray  # (N, L)
    length: int


def make_batch(examples) -> Batch:
    mags, phases, nyq, cleans, noisys = [], [], [], [], []
    length = len(examples[0].clean)
    for ex in examples:
        spec = stft(ex.noisy)
        mags.append(spec.magnitude)
        phases.append(spec.phase)
        nyq.append(spec.values[:, -1])
        cleans.append(ex.clean.samples)
        noisys.append(ex.noisy.samples)
    return Batch(np.stack(mags), np.stack(phases), np.stack(nyq),
                 np.stack(cleans), np.stack(noisys), length)


def _batches(examples, batch_size):
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        if chunk:
            yield make_batch(chunk)


def _denoised_signal(model, batch: Batch):
    """Differentiable masked resynthesis: returns (signal Tensor, latent)."""
    x = Tensor(batch.noisy_mag[:, None])  # (N, 1, T, F), constant
    mask, latent = model.forward(x)
    n, _, t, f = mask.shape
    denoised_mag = tt.reshape(tt.mul(mask, x), (n, t, f))
    signal = istft_with_phase(denoised_mag, batch.phase, length=batch.length,
                              nyquist=batch.nyquist)
    return signal, latent


def _frozen(model):
    class _Guard:
        def __enter__(self_inner):
            self_inner.saved = [p.requires_grad for _, p in model.parameters()]
            model.set_requires_grad(False)

        def __exit__(self_inner, *exc):
            for flag, (_, p) in zip(self_inner.saved, model.parameters()):
                p.requires_grad = flag

    return _Guard()


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    kd_loss: float
    out_loss: float
    total_loss: float
    val_loss: float
    is_best: bool = False


def format_history(history):
    """Line-oriented log: 'epoch kd_loss out_loss total_loss val_loss best'."""
    lines = ["# epoch kd_loss out_loss total_loss val_loss best"]
    for r in history:
        lines.append(
            f"{r.epoch} {r.kd_loss:.6f} {r.out_loss:.6f} {r.total_loss:.6f} "
            f"{r.val_loss:.6f} {int(r.is_best)}"
        )
    return "\n".join(lines) + "\n"


class _EarlyStopper:
    def __init__(self, patience, min_delta):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.since_best = 0

    def update(self, val_loss):
        """Returns (is_best, should_stop)."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.since_best = 0
            return True, False
        self.since_best += 1
        return False, self.since_best >= self.patience


def _snapshot(models_):
    return [
        [(name, p.data.copy()) for name, p in m.parameters()] for m in models_
    ]


def _restore(models_, snap):
    for m, params in zip(models_, snap):
        for (_, p), (_, data) in zip(m.parameters(), params):
            p.data = data.copy()


def _train_loop(student, adapter, teacher, config: TrainConfig, dataset: MixtureDataset,
                log=None, stop_fn=None):
    """Shared loop for pretraining (teacher=None, adapter=None) and KD.

    `stop_fn(model, record)`, when given, is polled after each epoch; a True
    return ends training keeping the CURRENT parameters (the state that
    satisfied the caller's goal), bypassing the best-validation restore.
    """
    weights = config.weights
    use_kd = adapter is not None and weights.lambda_kd != 0.0
    trainables = list(student.parameters())
    if use_kd:
        trainables += adapter.parameters()
    optimizer = Adam(trainables, config.learning_rate, config.beta1, config.beta2,
                     config.adam_eps)
    stopper = _EarlyStopper(config.patience, config.min_delta)
    history = []
    best_snap = None
    tracked = [student] + ([adapter] if use_kd else [])

    for epoch in range(1, config.max_epochs + 1):
        kd_sum = out_sum = tot_sum = 0.0
        n_batches = 0
        for batch in _batches(dataset.train_examples(epoch), config.batch_size):
            optimizer.zero_grad()
            parts = _joint_forward(student, adapter, teacher, batch, weights, use_kd)
            loss, kd_val, out_val = parts
            tt.backward(loss)
            optimizer.step()
            kd_sum += kd_val
            out_sum += out_val
            tot_sum += loss.item()
            n_batches += 1
        if n_batches == 0:
            raise ConfigError("training split produced no batches")

        val_loss = _validation_loss(student, adapter, teacher, config, dataset,
                                    weights, use_kd, epoch)
        is_best, should_stop = stopper.update(val_loss)
        record = EpochRecord(epoch, kd_sum / n_batches, out_sum / n_batches,
                             tot_sum / n_batches, val_loss, is_best)
        history.append(record)
        if log is not None:
            log(record)
        if not np.isfinite(record.total_loss):
            raise NumericsError(f"training diverged (loss not finite) at epoch {epoch}")
        if is_best:
            best_snap = _snapshot(tracked)
        if stop_fn is not None and stop_fn(student, record):
            best_snap = None  # keep the state that satisfied the stop condition
            break
        if should_stop:
            break

    if best_snap is not None:
        _restore(tracked, best_snap)
    return history


def _joint_forward(student, adapter, teacher, batch, weights, use_kd):
    kd_val = 0.0
    kd_term = None
    if use_kd:
        with _frozen(teacher):
            teacher_latent = teacher.encode(Tensor(batch.noisy_mag[:, None]))
        adapted = adapter.forward(Tensor(teacher_latent.data))
        signal, student_latent = _denoised_signal(student, batch)
        kd_term = batched_cosine_distance(adapted, student_latent)
        kd_val = kd_term.item()
    else:
        signal, _ = _denoised_signal(student, batch)
    out_term = si_snr_loss(batch.clean, signal)
    out_val = out_term.item()
    if use_kd:
        loss = weights.lambda_kd * kd_term + weights.lambda_out * out_term
    elif weights.lambda_out == 1.0:
        loss = out_term
    else:
        loss = weights.lambda_out * out_term
    return loss, kd_val, out_val


def _validation_loss(student, adapter, teacher, config, dataset, weights, use_kd, epoch):
    total, n = 0.0, 0
    for batch in _batches(dataset.val_examples(epoch), config.batch_size):
        with _frozen(student):
            if use_kd:
                with _frozen(adapter):
                    loss, _, _ = _joint_forward(student, adapter, teacher, batch,
                                                weights, use_kd)
            else:
                loss, _, _ = _joint_forward(student, adapter, teacher, batch,
                                            weights, use_kd)
        total += loss.item() if isinstance(loss, Tensor) else float(loss)
        n += 1
    if n == 0:
        raise ConfigError("validation split produced no batches")
    return total / n


def pretrain_teacher(model_config, config: TrainConfig, dataset: MixtureDataset,
                     log=None, stop_fn=None):
    """Train a model on supervised SI-SNR only; returns (model, history)."""
    model = build_model(model_config, seed=config.seed)
    sup = replace(config, lambda_kd=0.0, lambda_out=1.0)
    history = _train_loop(model, None, None, sup, dataset, log=log, stop_fn=stop_fn)
    return model, history


def distill_student(teacher, student_config, config: TrainConfig,
                    dataset: MixtureDataset, log=None):
    """KD: frozen teacher, jointly trained student + bottleneck adapter.

    Returns (student, adapter_or_None, history). With lambda_kd == 0 no
    teacher/adapter is touched and the run reduces to supervised training.
    """
    student = build_model(student_config, seed=config.seed)
    if config.lambda_kd != 0.0:
        t_shape = teacher.latent_shape
        s_shape = student.latent_shape
        if t_shape.as_tuple() == s_shape.as_tuple():
            raise ConfigError(
                f"teacher and student latents are identical ({t_shape}); nothing to adapt"
            )
        adapter = build_bottleneck(t_shape, s_shape, seed=config.seed)
        teacher.set_requires_grad(False)
    else:
        adapter = None
    history = _train_loop(student, adapter, teacher if adapter else None,
                          config, dataset, log=log)
    return student, adapter, history


def train_student_supervised(student_config, config: TrainConfig,
                             dataset: MixtureDataset, log=None):
    """Pure supervised student baseline (identical path to lambda_kd == 0 KD)."""
    sup = replace(config, lambda_kd=0.0)
    student, _, history = distill_student(None, student_config, sup, dataset, log=log)
    return student, history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def denoise_example(model, example):
    """Run one example through mask -> masked magnitude -> ISTFT (noisy phase)."""
    spec = stft(example.noisy)
    with _frozen(model):
        mask, _ = model.forward(Tensor(spec.magnitude))
    masked = spec.values[:, :-1] * mask.data  # magnitude scaled, noisy phase kept
    full = np.concatenate([masked, spec.values[:, -1:]], axis=1)
    return istft_complex(full, spec.fft_size, spec.hop, spec.length)


def evaluate(model, dataset: MixtureDataset) -> MetricsReport:
    """SDR / SI-SDR / STOI of the denoised test set against the clean refs."""
    report = MetricsReport()
    for ex in dataset.test_examples():
        est = denoise_example(model, ex)
        clean = ex.clean.samples
        report.add(sdr(clean, est), si_sdr(clean, est), stoi(clean, est))
    if not report.rows:
        raise ConfigError("test split is empty")
    return report


class IdentityMaskModel:
    """Pass-through stand-in whose mask is exactly 1 (evaluation oracle)."""

    def __init__(self, input_shape=(126, 256)):
        self.input_shape = tuple(input_shape)

    def parameters(self):
        return []

    def set_requires_grad(self, flag):
        pass

    def forward(self, mag):
        data = mag.data if isinstance(mag, Tensor) else np.asarray(mag)
        return Tensor(np.ones_like(data)), Tensor(np.zeros((1, 1, 1)))


def passthrough_report(dataset: MixtureDataset) -> MetricsReport:
    """Metrics of the raw noisy inputs against the clean refs."""
    report = MetricsReport()
    for ex in dataset.test_examples():
        clean, noisy = ex.clean.samples, ex.noisy.samples
        report.add(sdr(clean, noisy), si_sdr(clean, noisy), stoi(clean, noisy))
    return report


# ---------------------------------------------------------------------------
# repeated runs
# ---------------------------------------------------------------------------

def run_repeats(run_fn, n_repeats, seeds=None):
    """Aggregate per-metric mean/STD across n independently seeded runs.

    run_fn(seed) must return a MetricsReport; returns (per-run summaries,
    aggregate dict {metric: (mean, std)}).
    """
    if n_repeats < 2:
        raise ConfigError(f"n_repeats must be >= 2, got {n_repeats}")
    if seeds is None:
        seeds = list(range(n_repeats))
    if len(seeds) != n_repeats:
        raise ConfigError(f"need {n_repeats} seeds, got {len(seeds)}")
    summaries = []
    for seed in seeds:
        report = run_fn(seed)
        summaries.append({k: v[0] for k, v in report.summary().items()})
    aggregate = {}
    for key in summaries[0]:
        vals = np.array([s[key] for s in summaries])
        aggregate[key] = (float(vals.mean()), float(vals.std()))
    return summaries, aggregate


def format_repeats_table(aggregate, label="model"):
    """Table-style 'Mean/STD' rows, one line per metric."""
    lines = [f"# {label}: mean/std over repeated runs"]
    lines.append("# metric mean std")
    for key, (mean, std) in aggregate.items():
        lines.append(f"{key} {mean:.4f}/{std:.4f}")
    return "\n".join(lines) + "\n"
