//! Temporal-frequency patch embedding, low-rank adapters and two-stage
//! training for EEG segment classification.
//!
//! ```text
//! recording ─ bandpass ─ notch ─ resample(200 Hz) ─ 10 s segments ─ C×10×200 patches
//!                                                                        │
//!   [cls] + STFE tokens (temporal ⓒ λ_f·frequency) ─ encoder (LoRA on Wq/Wv) ─ head
//! ```

pub mod encoder;
pub mod error;
pub mod lora;
pub mod model;
pub mod numerics;
pub mod signal;
pub mod stfe;
pub mod synth;
pub mod train;

pub use error::{Error, FormatError, Result};
