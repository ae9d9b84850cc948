//! F0 extraction at four times the Mel frame rate and the per-utterance
//! normalisation transforms around it.

pub mod contour;
pub mod tracker;

pub use contour::{
    compute_stats, denormalize_f0, log1p_f0, normalize_f0, NormalizedContour, PitchBand,
    PitchContour, PitchStats, PITCH_HOP, PITCH_RATE_FACTOR, STD_FLOOR_HZ,
};
pub use tracker::{track_pitch, TrackerConfig};
