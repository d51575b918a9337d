"""Entanglement certification from time-stamped single-photon camera events."""
__version__ = "0.1.0"

from .events import (Basis, CoincidencePair, Half, OpticsConfig, PhotonEvent, PixelHit,
                     decode_hits, encode_hits, read_phl1, write_phl1)
from .jpd import Jpd, accumulate, conditional, marginal, merge, minus_projection, sum_projection
from .pipeline import (ClusterParams, PairingParams, StreamProcessor, find_coincidences,
                       process_hits, reconstruct)
from .analysis import (AnalysisParams, CertificationReport, certify, delta_min,
                       eof_lower_bound, epr_reid_product, table1_report)
from .sim import (DetectorParams, SourceParams, detector_response, pure_state_widths,
                  sample_pairs, simulate, theory_report)

__all__ = [
    "Basis", "CoincidencePair", "Half", "OpticsConfig", "PhotonEvent", "PixelHit",
    "decode_hits", "encode_hits", "read_phl1", "write_phl1",
    "Jpd", "accumulate", "conditional", "marginal", "merge", "minus_projection",
    "sum_projection", "ClusterParams", "PairingParams", "StreamProcessor",
    "find_coincidences", "process_hits", "reconstruct", "AnalysisParams",
    "CertificationReport", "certify", "delta_min", "eof_lower_bound", "epr_reid_product",
    "table1_report", "DetectorParams", "SourceParams", "detector_response",
    "pure_state_widths", "sample_pairs", "simulate", "theory_report",
]
