//! Sparse sensor placement and reconstruction of gridded spatiotemporal fields.
//!
//! Sensors are placed by greedy row-pivoted QR on the leading principal
//! basis of a training series. Full fields are then recovered from the
//! sensor readings either by least squares on that basis or by a recurrent
//! network (LSTM followed by a ReLU reconstructor).
//!
//! ```
//! use sparsefield::data::{synth_series, SynthKind, SynthSpec};
//! use sparsefield::linear::{fit_principal_basis, reconstruct_linear};
//! use sparsefield::placement::{measure_matrix, select_sampling_locations};
//!
//! let series = synth_series(&SynthSpec {
//!     kind: SynthKind::StandingWaves,
//!     height: 8,
//!     width: 8,
//!     snapshots: 30,
//!     seed: 1,
//!     noise: 0.0,
//!     components: 1,
//! })?;
//! let placement = select_sampling_locations(&series, 2)?;
//! let basis = fit_principal_basis(&series, 2)?;
//! let phi = series.to_matrix();
//! let recon = reconstruct_linear(&basis, &placement, &measure_matrix(&placement, &phi)?)?;
//! assert!(recon.sub(&phi)?.max_abs() < 1e-8);
//! # Ok::<(), sparsefield::Error>(())
//! ```

pub mod data;
mod error;
pub mod linalg;
pub mod linear;
pub mod metrics;
pub mod neural;
pub mod placement;
pub mod rng;

pub use error::{Error, Result};
