//! Gauss-Newton outer loop and per-frame reconstruction.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::decomp::WorkerGroup;
use crate::fft::{FftCounter, FftUse};
use crate::planner::ReconPlan;
use crate::preproc::{GriddedData, PsfKernel};
use crate::{Error, Result, C32};

use super::cg::{cg_solve, CgReport};
use super::ops::NlinvOp;
use super::Estimate;

/// Iterate of the Gauss-Newton loop for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonState {
    pub frame: usize,
    /// Index of the next step to run.
    pub step: usize,
    pub x: Estimate,
    pub alpha: f64,
}

impl NewtonState {
    pub fn new(frame: usize, x: Estimate, plan: &ReconPlan) -> Self {
        Self {
            frame,
            step: 0,
            x,
            alpha: plan.alpha_at(0),
        }
    }
}

/// Outcome of one frame.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub frame: usize,
    /// `rho * rss(c)` on the central `N x N` pixels.
    pub image: Vec<C32>,
    pub estimate: Estimate,
    pub cg: Vec<CgReport>,
    /// Squared gridded data residual before each step.
    pub residuals: Vec<f64>,
    pub elapsed: Duration,
}

impl FrameResult {
    pub fn cg_iterations(&self) -> usize {
        self.cg.iter().map(|r| r.iterations).sum()
    }
}

/// Operator, plan and workers for one reconstruction thread.
#[derive(Clone, Debug)]
pub struct Solver {
    plan: ReconPlan,
    op: NlinvOp,
    group: WorkerGroup,
}

impl Solver {
    pub fn new(plan: &ReconPlan, channels: usize, workers: usize) -> Result<Self> {
        Self::with_group(plan, WorkerGroup::new(channels, workers)?, None)
    }

    pub fn with_group(
        plan: &ReconPlan,
        group: WorkerGroup,
        counter: Option<Arc<FftCounter>>,
    ) -> Result<Self> {
        plan.validate()?;
        Ok(Self {
            plan: plan.clone(),
            op: NlinvOp::with_counter(plan, counter),
            group,
        })
    }

    pub fn plan(&self) -> &ReconPlan {
        &self.plan
    }

    pub fn op(&self) -> &NlinvOp {
        &self.op
    }

    pub fn group(&self) -> &WorkerGroup {
        &self.group
    }

    /// One step: solve for `dx`, then `x += dx`, `alpha <- max(q alpha, alpha_min)`.
    pub fn newton_step(
        &self,
        state: &mut NewtonState,
        z: &GriddedData,
        psf: &PsfKernel,
        x_prev: &Estimate,
    ) -> Result<(CgReport, f64)> {
        z.check(&self.plan)?;
        if !state.x.same_shape(x_prev) || state.x.channels != z.channels {
            return Err(Error::config("estimate, regularization target and data disagree in shape"));
        }
        let plan = &self.plan;
        self.group.install(|| {
            let mut cache = self.op.prepare(&state.x, &self.group);
            let (mut rhs, resid) = self.op.residual_gradient(&mut cache, z, psf, &self.group)?;
            let a = state.alpha as f32;
            rhs.axpy(-a, &state.x);
            rhs.axpy(a * plan.damping as f32, x_prev);
            let (dx, report) = cg_solve(
                &self.op,
                &mut cache,
                psf,
                &self.group,
                &rhs,
                state.alpha,
                plan.cg_tol,
                plan.cg_max_iter,
                state.frame,
            )?;
            state.x.axpy(1.0, &dx);
            if !state.x.is_finite() {
                return Err(Error::Divergence {
                    frame: state.frame,
                    detail: format!("non-finite estimate after Newton step {}", state.step),
                });
            }
            state.step += 1;
            state.alpha = (state.alpha * plan.alpha_q).max(plan.alpha_min);
            Ok((report, resid))
        })
    }

    /// Runs all Newton steps of a frame. `target(m)` supplies the
    /// regularization estimate for step `m`; it is asked once per step,
    /// just before the step starts.
    pub fn reconstruct_with<F>(
        &self,
        frame: usize,
        z: &GriddedData,
        psf: &PsfKernel,
        x_init: Estimate,
        mut target: F,
    ) -> Result<FrameResult>
    where
        F: FnMut(usize) -> Result<Arc<Estimate>>,
    {
        let t0 = Instant::now();
        let mut state = NewtonState::new(frame, x_init, &self.plan);
        let mut cg = Vec::with_capacity(self.plan.newton_steps);
        let mut residuals = Vec::with_capacity(self.plan.newton_steps);
        for m in 0..self.plan.newton_steps {
            let x_prev = target(m)?;
            let (report, resid) = self.newton_step(&mut state, z, psf, &x_prev)?;
            log::trace!(
                "frame {frame} step {m}: alpha {:.3e}, {} CG iterations, residual {resid:.4e}",
                state.alpha,
                report.iterations
            );
            cg.push(report);
            residuals.push(resid);
        }
        let image = self.image(&state.x);
        Ok(FrameResult {
            frame,
            image,
            estimate: state.x,
            cg,
            residuals,
            elapsed: t0.elapsed(),
        })
    }

    pub fn reconstruct(
        &self,
        frame: usize,
        z: &GriddedData,
        psf: &PsfKernel,
        x_init: Estimate,
        x_reg: Arc<Estimate>,
    ) -> Result<FrameResult> {
        self.reconstruct_with(frame, z, psf, x_init, |_| Ok(x_reg.clone()))
    }

    /// `rho * rss(c)` on the central `N x N` pixels.
    pub fn image(&self, x: &Estimate) -> Vec<C32> {
        self.group.install(|| {
            let cache = self.op.prepare_with(x, &self.group, FftUse::Other);
            self.op.image(&cache, self.plan.n)
        })
    }

    /// Gridded model data `F^H F(rho c_j)` of an estimate.
    pub fn model_data(&self, x: &Estimate, psf: &PsfKernel) -> GriddedData {
        let mut cache = self.op.prepare_with(x, &self.group, FftUse::Other);
        let chans = self.op.model_data(&mut cache, psf);
        GriddedData {
            g: self.plan.g,
            channels: x.channels,
            z: chans.concat(),
        }
    }
}

/// Free-function form of [`Solver::newton_step`] on a single worker.
pub fn newton_step(
    state: &mut NewtonState,
    z: &GriddedData,
    psf: &PsfKernel,
    x_prev: &Estimate,
    plan: &ReconPlan,
) -> Result<CgReport> {
    let solver = Solver::new(plan, z.channels, 1)?;
    solver.newton_step(state, z, psf, x_prev).map(|(r, _)| r)
}

/// Reconstructs one frame on a single worker.
pub fn reconstruct_frame(
    frame: usize,
    z: &GriddedData,
    psf: &PsfKernel,
    x_init: Estimate,
    x_reg: Arc<Estimate>,
    plan: &ReconPlan,
) -> Result<FrameResult> {
    Solver::new(plan, z.channels, 1)?.reconstruct(frame, z, psf, x_init, x_reg)
}

/// Scales `z` to l2 norm `target` and returns the factor used.
pub fn scale_to_norm(z: &mut GriddedData, target: f64) -> f32 {
    let n = z.norm();
    if n == 0.0 || !n.is_finite() {
        return 1.0;
    }
    let s = (target / n) as f32;
    z.scale(s);
    s
}
