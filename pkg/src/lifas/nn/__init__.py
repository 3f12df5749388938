from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .model import Model, ModelSpec, init_model, model_backward, model_forward, residual_block_forward
from .ops import (
    batchnorm2d,
    conv2d_backward,
    conv2d_forward,
    global_avg_pool,
    linear,
    relu,
    softmax,
    softmax_cross_entropy,
)
