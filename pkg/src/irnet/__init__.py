"""Traffic speed prediction with intersection reconstruction (IRNet)."""

from .roadnet import DUMB, RoadNetwork, build_network
from .warp import dtw_distance
from .reconstruct import ReconstructionPlan, build_plan
from .datagen import Normalizer, Sample, SpeedStore, SynthSpec, synth_network
from .model import ModelConfig, init, forward
from .train import TrainConfig, evaluate, fine_tune_transfer, train

__version__ = "0.1.0"
