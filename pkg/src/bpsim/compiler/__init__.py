from .codegen import codegen, compile_model
from .model import Layer, LayerDFG, layer_entry, load_model, parse_model
from .optimize import LayerPlan, Schedule, optimize
from .tiling import CutSpec, Estimate, TileSpec, enumerate_candidates, estimate

__all__ = [
    "CutSpec", "Estimate", "Layer", "LayerDFG", "LayerPlan", "Schedule", "TileSpec", "codegen",
    "compile_model", "enumerate_candidates", "estimate", "layer_entry", "load_model", "optimize",
    "parse_model",
]
