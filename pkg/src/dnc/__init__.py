"""Distance-threshold sparsification and nested DBBD solving for uplink C-RAN MMSE detection."""

from .channel import ChannelSet, generate_channel, sparsify, transmit
from .cluster import BlockStructure, label_rrhs, nest_labelling, permute_to_dbbd, verify_dbbd
from .detect import build_A_hat, compute_N1, mmse_full, mmse_sparsified, sinr_ratio_empirical
from .netgen import AreaGeometry, NetworkLayout, generate_layout
from .planner import PoolProfile, cost_model, optimal_single_layer, optimal_two_layer, predict_blocks, ratio_to_side
from .solver import detect_from_omega, invert_block_nested, solve_multi_layer, solve_single_layer
from .threshold import ThresholdQuery, expected_sparsity, sinr_ratio_lower_bound, solve_threshold

__all__ = [
    "AreaGeometry", "NetworkLayout", "generate_layout",
    "ChannelSet", "generate_channel", "sparsify", "transmit",
    "build_A_hat", "compute_N1", "mmse_full", "mmse_sparsified", "sinr_ratio_empirical",
    "ThresholdQuery", "expected_sparsity", "sinr_ratio_lower_bound", "solve_threshold",
    "BlockStructure", "label_rrhs", "nest_labelling", "permute_to_dbbd", "verify_dbbd",
    "detect_from_omega", "invert_block_nested", "solve_multi_layer", "solve_single_layer",
    "PoolProfile", "cost_model", "optimal_single_layer", "optimal_two_layer", "predict_blocks", "ratio_to_side",
]
