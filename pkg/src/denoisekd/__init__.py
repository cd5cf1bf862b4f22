"""Teacher/student UNet speech denoising with linear-bottleneck knowledge
distillation, built on a self-contained float64 autodiff engine.

Subpackage map:
  tensor    autodiff engine (elementwise, reductions, conv2d/conv2d_transpose,
            instance norm, activations, backward)
  kernels   compiled (Cython) or numpy patch gather/scatter backend
  dsp       STFT/ISTFT (512/256 Hann, center-padded) + differentiable ISTFT
  models    UNet configs/presets, bottleneck adapter, accounting, checkpoints
  losses    cosine-distance KD loss, SI-SNR loss, joint loss
  metrics   SDR/SI-SDR/STOI and the metrics report
  data      WAV I/O, segmentation, SNR mixing, synthetic corpus, manifests
  training  Adam, pretraining/distillation loops, evaluation, repeat harness
  cli       `denoisekd` command-line entry points
"""

from .tensor import Tensor, backward

__all__ = ["Tensor", "backward"]
__version__ = "0.1.0"
