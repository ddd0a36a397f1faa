"""focalseg: boundary-weighted focal segmentation losses, focal attention
U-Nets, and a zero-init heuristic for selecting attention modules."""

__version__ = "0.1.0"

from .attention import AttentionGate, FocalLayer, SEBlock, focal_layer
from .data import (Dataset, Sample, SplitSpec, augment, load_dataset,
                   normalize, split, split_indices, synth_blobs)
from .distance import (DistanceMap, WeightMap, class_weight_maps,
                       distance_penalty, distance_transform,
                       focal_distance_penalty, render_heatmap,
                       squared_distance_transform)
from .losses import (LossSpec, LossValue, asymmetric_focal_loss,
                     asymmetric_focal_tversky_loss, cross_entropy_loss,
                     derive_loss, dice_loss, dice_plus_ce, evaluate_spec,
                     tversky_index, unified_focal_loss)
from .network import (AttentionPlacement, NetworkConfig, UNet,
                      all_ag_placements, all_se_placements, build_unet,
                      load_checkpoint, prune_placements, save_checkpoint)
from .selection import (FocalTrace, SelectionReport, finalize, run_selection,
                        traces_from_history)
from .training import (EarlyStopping, History, MetricsReport,
                       PlateauScheduler, TrainConfig, evaluate, fit,
                       image_metrics)
