"""Multi-scale neural-process model for drug-drug interaction prediction."""

from .chem import MolecularGraph, featurize_smiles, parse_smiles
from .config import RunConfig, TrainConfig
from .model import MPNPModel, PairOutputs, PredictionOutput
from .objective import Example, fit, predict

__all__ = [
    "Example", "MPNPModel", "MolecularGraph", "PairOutputs", "PredictionOutput", "RunConfig",
    "TrainConfig", "featurize_smiles", "fit", "parse_smiles", "predict",
]
__version__ = "0.1.0"
