from .optim import TrainConfig, adam_step
from .train import PlateauSchedule, predict, train
from .unet import AttentionUNet, NetworkConfig, init_params, unet_forward
from .weights import VGG19_MAPPING, import_weights, load_weights, save_weights

__all__ = ["AttentionUNet", "NetworkConfig", "PlateauSchedule", "TrainConfig", "VGG19_MAPPING",
           "adam_step", "import_weights", "init_params", "load_weights", "predict", "save_weights",
           "train", "unet_forward"]
