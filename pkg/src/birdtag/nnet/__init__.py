"""A small numpy network engine: layers, U-net and classifier builders,
Dice/BCE training, and binary checkpoints."""
from .checkpoint import CheckpointError, load, save
from .layers import (ConcatSkip, Conv2d, Dense, GlobalAvgPool, Layer, MaxPool2,
                     ReLU, Sigmoid, Upsample2)
from .network import Network, build_classifier, build_unet
from .train import (TrainConfig, TrainingDiverged, TrainReport, bce_with_logits,
                    dice_coefficient, dice_loss, dice_loss_grad, predict_mask,
                    predict_proba, train, train_classifier)
