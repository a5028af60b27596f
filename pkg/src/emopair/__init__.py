"""Pairwise feature-subspace classification with voting-and-competition fusion."""

from emopair.dataset import Dataset, LabelUniverse, SpeakerFoldPlan
from emopair.pairvote import PairwiseEnsemble, VoteTally, vote_decision

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "LabelUniverse",
    "SpeakerFoldPlan",
    "PairwiseEnsemble",
    "VoteTally",
    "vote_decision",
]
