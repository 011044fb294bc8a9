"""Self-contained face detection and matching engine: cascade detection with
an adaptive parameter sweep, center-proximity face selection, 128-d encoding
comparison, a pairwise confusion-matrix evaluation harness, and a headless
gate-pass registry."""

from .imageio import GrayImage, RgbImage, Rect
from .cascade import CascadeModel, parse_cascade_xml, dump_cascade_xml
from .detector import DetectParams, Detection, IntegralImage, integral, \
    eval_window, scan, group_rects, detect_multiscale
from .enhanced import SweepSchedule, SelectionPolicy, SelectedFace, \
    EnhancedResult, default_schedule, select_face, detect_enhanced
from .matching import FaceEncoding, MatcherConfig, MatchResult, \
    EmbeddingProvider, ReferenceEmbedder, euclidean_distance, similarity_pct, \
    match, reference_embed, encode_pipeline

__version__ = "0.1.0"
