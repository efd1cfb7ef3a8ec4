//! Real-time nonlinear inverse reconstruction (NLINV) for radial MRI.
//!
//! The crate joins the image/coil estimation core with the machinery that
//! makes it fast enough for online use: FFT-size planning, channel and
//! temporal decomposition over compute workers, a five-stage actor
//! pipeline and a measured-runtime autotuning database.
//!
//! Module map:
//!
//! * [`seqsim`]: radial interleaved-turn trajectories and analytic phantoms
//! * [`ingest`]: `.rtk` k-space and `.rti` image streams
//! * [`preproc`]: channel compression, gridding and point-spread kernels
//! * [`planner`]: FFT lookup tables, grid selection, coil crop/pad
//! * [`nlinv`]: weighting, normal operator, CG and the Gauss-Newton loop
//! * [`decomp`]: channel partitioning, all-reduce and the temporal scheduler
//! * [`pipeline`]: src → pre → rec → pst → snk
//! * [`autotune`]: `(protocol) → (T, A) → runtime` database

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autotune;
pub mod config;
pub mod decomp;
mod error;
pub mod fft;
pub mod ingest;
pub mod metrics;
pub mod nlinv;
pub mod pipeline;
pub mod planner;
pub mod preproc;
pub mod seqsim;

pub use error::{Error, Result};
pub use num_complex::Complex32;

pub use autotune::{ProtocolKey, TuningDb, TuningRecord};
pub use decomp::{TemporalSchedule, WorkerGroup};
pub use ingest::{DatasetHeader, ImageKind, ImageOut, Mode};
pub use metrics::PerfReport;
pub use nlinv::{Estimate, WeightSpec};
pub use planner::{FftLookupTable, ReconPlan};
pub use preproc::{CompressionMatrix, GriddedData, PsfKernel};
pub use seqsim::{KSpaceFrame, PhantomSpec, TrajectorySpec};

/// Single-precision complex sample, the element type of every data array.
pub type C32 = Complex32;
