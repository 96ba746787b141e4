"""Decoding fully synchronized LoRa collisions with gateway guesses and device bitmaps."""

from .decoder import DecodeResult, GuessFrame, PartialFrame, Strategy, decode
from .metrics import AggregateReport, EnergyAccounting, EnergyConfig
from .phy_model import Bitmap, Frame, PayloadModel, SfParams, SuperposedObservation, superpose
from .simulator import Interferer, Protocol, Scenario, run_replications
from .mac_timing import TimingConfig

__all__ = [
    "AggregateReport",
    "Bitmap",
    "DecodeResult",
    "EnergyAccounting",
    "EnergyConfig",
    "Frame",
    "GuessFrame",
    "Interferer",
    "PartialFrame",
    "PayloadModel",
    "Protocol",
    "Scenario",
    "SfParams",
    "Strategy",
    "SuperposedObservation",
    "TimingConfig",
    "decode",
    "run_replications",
    "superpose",
]
