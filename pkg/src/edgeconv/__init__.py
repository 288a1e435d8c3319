"""Boundary-aware convolution with learned per-region edge filters."""

from .conv import (
    BOUNDARY_MODES,
    KernelSet,
    RegionPartition,
    conv2d_backward,
    conv2d_forward,
    partition_build,
    region_rectangles,
    sample_extended,
)
from .dataio import (
    BlurTaskSample,
    DatasetSplit,
    NetpbmError,
    gaussian_kernel,
    generate_corpus,
    load_corpus,
    make_blur_sample,
    read_netpbm,
    synth_image,
    write_netpbm,
)
from .metrics import (
    BandStats,
    ErrorMap,
    boundary_band_stats,
    dssim,
    error_map_accumulate,
    loss_ratio,
    mse,
    psnr,
    required_crop,
    welch_t_test,
)
from .net import (
    CheckpointError,
    LayerSpec,
    Network,
    NetworkConfig,
    checkpoint_load,
    checkpoint_save,
    mse_loss_and_grad,
    network_backward,
    network_build,
    network_forward,
)
from .optim import AdamState, adam_step, sgd_step
from .tensor import Shape, tensor_create, tensor_map, tensor_reduce_mean

__version__ = "0.1.0"
