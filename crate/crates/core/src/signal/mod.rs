//! ECG preprocessing: filters, R-peak detection, heartbeat segmentation,
//! trend extraction, normalisation and restoration masks.

pub mod beats;
pub mod filter;
pub mod mask;
pub mod pipeline;
pub mod record;
pub mod rpeak;

pub use beats::{extract_trend, resample_linear, resample_nearest, segment_heartbeats, znormalize, Heartbeat, TrendSignal};
pub use filter::{butterworth_bandpass, butterworth_bandpass_sos, notch_filter, notch_sos, Biquad, Sos};
pub use mask::{make_global_mask, make_local_mask, masked_points, MaskSpec};
pub use pipeline::{sliding_offsets, PreparedRecord, PreparedWindow, PreprocessConfig};
pub use record::{read_split, EcgRecord, RecordLabel};
pub use rpeak::{detect_r_peaks, detection_envelope};
