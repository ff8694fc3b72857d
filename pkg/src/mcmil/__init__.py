"""Multiple instance learning on large images with grid, uniform and
particle-based patch sampling."""
from .bag_model import BoundsError, ImageBag, NumericError, Patch, PatchCoord, clamp_center, extract_patch
from .mil import BagPrediction, aggregate_max, aggregate_topk, bag_loss_and_grads
from .model import (
    ClassifierState,
    PatchGradient,
    adam_update,
    backward,
    forward,
    forward_batch,
    init_classifier,
    load_checkpoint,
    save_checkpoint,
)
from .samplers import (
    GridConfig,
    MCConfig,
    ParticleSet,
    grid_positions,
    mc_displace,
    mc_init,
    mc_normalize,
    mc_resample,
    mc_step,
    uniform_positions,
)
from .synth_data import GlyphSet, SynthConfig, generate_bag, generate_dataset, load_idx, procedural_glyphs
from .harness import (
    EpochMetrics,
    ExperimentConfig,
    compare,
    desk_experiment,
    evaluate,
    export_artifacts,
    load_data,
    paper_experiment,
    probability_map,
    run_experiment,
    train,
)
from .pgm import read_pgm, write_pgm

__version__ = "0.1.0"
