from .cct import BinaryCCT, BinaryFFN, BinaryMHSA, CCTConfig, SeqPool, build_dybinarycct, seqpool
from .dybcnn import BCNNConfig, DyBCNN, build_dybcnn
from .graph import LayerGraph, LayerSpec
from .presets import PRESETS, Preset, get_preset

__all__ = [
    "BinaryCCT", "BinaryFFN", "BinaryMHSA", "CCTConfig", "SeqPool", "build_dybinarycct", "seqpool",
    "BCNNConfig", "DyBCNN", "build_dybcnn", "LayerGraph", "LayerSpec", "PRESETS", "Preset", "get_preset",
]
