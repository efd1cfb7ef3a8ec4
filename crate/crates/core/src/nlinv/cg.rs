//! Krylov solver for `(DF^H DF + alpha I) dx = rhs`.
//!
//! The iteration is the conjugate-gradient variant that is conjugate in
//! the operator's own inner product (conjugate residuals). It needs one
//! operator application per iteration, like plain CG, and its residual
//! norm cannot increase, which makes the stopping rule well behaved.

use crate::decomp::WorkerGroup;
use crate::preproc::PsfKernel;
use crate::{Error, Result};

use super::ops::{NlinvOp, StepCache};
use super::Estimate;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// `|r_i| / |rhs|` after each iteration, starting with `1.0`.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl CgReport {
    pub fn final_residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

fn system(
    op: &NlinvOp,
    cache: &mut StepCache,
    psf: &PsfKernel,
    group: &WorkerGroup,
    alpha: f32,
    v: &Estimate,
    out: &mut Estimate,
) -> Result<()> {
    op.apply_normal_into(v, cache, psf, group, out)?;
    out.axpy(alpha, v);
    Ok(())
}

/// Stops when `|r| <= tol |rhs|` or after `max_iter` iterations.
#[allow(clippy::too_many_arguments)]
pub fn cg_solve(
    op: &NlinvOp,
    cache: &mut StepCache,
    psf: &PsfKernel,
    group: &WorkerGroup,
    rhs: &Estimate,
    alpha: f64,
    tol: f64,
    max_iter: usize,
    frame: usize,
) -> Result<(Estimate, CgReport)> {
    if !(alpha > 0.0) {
        return Err(Error::config(format!("regularization {alpha} must be positive")));
    }
    let diverged = |detail: String| Error::Divergence { frame, detail };
    let mut x = Estimate::zeros(rhs.g, rhs.gc, rhs.channels);
    let bnorm = rhs.norm();
    let mut report = CgReport {
        iterations: 0,
        residuals: vec![1.0],
        converged: true,
    };
    if !bnorm.is_finite() {
        return Err(diverged("right-hand side is not finite".into()));
    }
    if bnorm == 0.0 || max_iter == 0 {
        report.converged = bnorm == 0.0;
        return Ok((x, report));
    }
    let a = alpha as f32;
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut ar = Estimate::zeros(rhs.g, rhs.gc, rhs.channels);
    system(op, cache, psf, group, a, &r, &mut ar)?;
    let mut ap = ar.clone();
    let mut rar = r.dot_re(&ar);
    report.converged = false;
    loop {
        let apap = ap.dot_re(&ap);
        if !(apap > 0.0) || !rar.is_finite() {
            return Err(diverged(format!(
                "breakdown at iteration {} (<Ap,Ap> = {apap}, <r,Ar> = {rar})",
                report.iterations
            )));
        }
        let step = (rar / apap) as f32;
        x.axpy(step, &p);
        r.axpy(-step, &ap);
        report.iterations += 1;
        let rel = r.norm() / bnorm;
        if !rel.is_finite() {
            return Err(diverged(format!("residual is {rel} at iteration {}", report.iterations)));
        }
        report.residuals.push(rel);
        if rel <= tol {
            report.converged = true;
            break;
        }
        if report.iterations >= max_iter {
            break;
        }
        system(op, cache, psf, group, a, &r, &mut ar)?;
        let rar_new = r.dot_re(&ar);
        let beta = (rar_new / rar) as f32;
        rar = rar_new;
        p.xpay(beta, &r);
        ap.xpay(beta, &ar);
    }
    Ok((x, report))
}
