//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use rtnlinv::nlinv::scale_to_norm;
use rtnlinv::preproc::{build_psf, grid_adjoint};
use rtnlinv::seqsim::simulate_frame;
use rtnlinv::{Estimate, GriddedData, KSpaceFrame, PhantomSpec, PsfKernel, ReconPlan, TrajectorySpec};

pub const CHANNELS: usize = 4;

/// One simulated frame of the moving head phantom with its gridded data and PSF.
pub struct Fixture {
    pub plan: ReconPlan,
    pub frame: KSpaceFrame,
    pub data: GriddedData,
    pub psf: Arc<PsfKernel>,
    pub init: Estimate,
}

impl Fixture {
    pub fn new(n: usize) -> Self {
        let plan = ReconPlan::with_gamma(n, 1.5).expect("valid plan");
        let phantom = PhantomSpec::dynamic_head(n as f64, CHANNELS);
        let spec = TrajectorySpec::new(11, 5, 2 * n);
        let frame = simulate_frame(&phantom, &spec, 0).expect("simulated frame");
        let mut data = grid_adjoint(&frame, &plan).expect("gridding");
        scale_to_norm(&mut data, plan.data_norm);
        let psf = Arc::new(
            build_psf(&frame.spoke_angles, frame.samples_per_spoke, &plan).expect("psf"),
        );
        let init = Estimate::initial(&plan, CHANNELS);
        Self {
            plan,
            frame,
            data,
            psf,
            init,
        }
    }
}
