//! Pixel-volume motion compensation for video deblurring.
//!
//! The crate is organised bottom-up:
//!
//! * [`frame`] holds the image, flow and mask value types plus bilinear sampling.
//! * [`warp`] is the backward warping operator and the masked MSE used by every loss.
//! * [`volume`] builds pixel volumes (k² matching candidates per pixel) and derives
//!   majority, ideal and naive warps together with candidate statistics.
//! * [`tvl1`] is a pyramidal TV-L1 optical flow solver.
//! * [`synth`] renders synthetic sharp/blurred sequences with ground-truth flow and
//!   calibrates flow parameters against the blur-invariant loss.
//! * [`metrics`] provides PSNR, SSIM, their translation-aligned variants and endpoint error.
//! * [`pipeline`] runs the recurrent deblurring loop with pluggable deblurrers.
//! * [`io`] reads and writes PNG frames, Middlebury `.flo`, `.pvol`, scene configs and manifests.

pub mod error;
pub mod filter;
pub mod frame;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod synth;
pub mod tvl1;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
pub use frame::{FlowField, Frame, Mask};
pub use metrics::MetricReport;
pub use pipeline::{DeblurrerKind, PipelineConfig};
pub use synth::SceneSpec;
pub use tvl1::FlowParams;
pub use volume::{PixelVolume, PvStats};
