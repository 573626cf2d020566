"""Motion-enhanced multi-level detection and interpolated tracking of micro-scale swimmers."""
from .analytics import (GroundTruth, MotilityClass, calibrate_thresholds, classify_motility,
                        diffusivity_curve, match_detections, match_tracks, mean_speed,
                        stage_report)
from .detection import Detection, DetectionSet, Level, blob_detect, merge_levels, read_detections
from .errors import ConfigError, FormatError, LoadError, MemTrackError, NumericalError
from .imaging import FrameSequence, SequenceManifest, crop_roi, load_sequence
from .motion import build_feature_stack, lucas_kanade_flow, median_background, median_deviation
from .pruning import PrunerConfig, area_filter, confidence_filter, iou, nms, prune
from .tracking import TrackerConfig, Tracklet, associate, track, track_length_filter

__version__ = '0.1.0'
