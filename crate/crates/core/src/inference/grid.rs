use std::collections::HashSet;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::laplace::{gaussian_approx, laplace_log_posterior, GaussianApprox, NewtonConfig};
use super::latent::LatentModel;
use crate::error::{Error, Result};
use crate::model::{Hyperparameters, RandomBlock};

/// Controls for the hyperparameter mode search and integration grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Grid spacing in standardized units. When absent, 0.75 for up to two
    /// hyperparameters and 1.5 beyond that.
    pub step: Option<f64>,
    /// Points more than this far below the mode's log posterior are dropped.
    pub drop: f64,
    /// Largest lattice index along any standardized axis.
    pub max_steps: usize,
    /// Cap on the number of grid points.
    pub max_points: usize,
    /// Finite-difference step for gradients in the mode search.
    pub gradient_step: f64,
    /// Finite-difference step for the Hessian at the mode.
    pub hessian_step: f64,
    /// Evaluations without improvement after which the mode search gives up.
    pub stall_evaluations: usize,
    pub max_iterations: usize,
    /// Box on `z = log τ` during the mode search.
    pub lower: f64,
    pub upper: f64,
    /// Smallest eigenvalue kept in the negative Hessian.
    pub min_curvature: f64,
    /// Starting point in `z`; zero (unit precisions) when absent.
    pub initial: Option<Vec<f64>>,
    pub newton: NewtonConfig,
}

impl GridConfig {
    /// Spacing used for `d` hyperparameters.
    pub fn step_for(&self, d: usize) -> f64 {
        self.step.unwrap_or(if d <= 2 { 0.75 } else { 1.5 })
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            step: None,
            drop: 5.0,
            max_steps: 8,
            max_points: 20_000,
            gradient_step: 1e-4,
            hessian_step: 5e-3,
            stall_evaluations: 200,
            max_iterations: 100,
            lower: -15.0,
            upper: 20.0,
            min_curvature: 1e-2,
            initial: None,
            newton: NewtonConfig::default(),
        }
    }
}

/// One integration point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    /// Log precisions.
    pub z: Vec<f64>,
    /// Standardized coordinates.
    pub u: Vec<f64>,
    pub log_posterior: f64,
    /// Log integration volume attached to the point (up to a constant).
    pub log_volume: f64,
    pub weight: f64,
    /// Skewness-corrected conditional mean of the latent field.
    pub mean: Vec<f64>,
    pub approx: GaussianApprox,
}

/// Hyperparameter integration grid.
#[derive(Debug, Clone)]
pub struct HyperGrid {
    pub blocks: Vec<RandomBlock>,
    pub points: Vec<GridPoint>,
    /// Index of the point with the largest log posterior.
    pub mode_index: usize,
    /// Mode of the log posterior found by the search.
    pub mode: Vec<f64>,
    /// Negative Hessian of the log posterior at the mode, eigenvalues clamped.
    pub neg_hessian: DMatrix<f64>,
    /// Log posterior evaluations spent on the search, Hessian and grid.
    pub evaluations: usize,
    /// Lattice spacing in standardized units.
    pub step: f64,
}

impl HyperGrid {
    /// Weighted mean of `z` over the grid.
    pub fn mean_z(&self) -> Vec<f64> {
        let d = self.blocks.len();
        let mut mean = vec![0.0; d];
        for p in &self.points {
            for (m, z) in mean.iter_mut().zip(&p.z) {
                *m += p.weight * z;
            }
        }
        mean
    }

    /// Covariance of `z` implied by the clamped Hessian.
    pub fn laplace_covariance(&self) -> DMatrix<f64> {
        self.neg_hessian
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(self.blocks.len(), self.blocks.len()))
    }

    pub fn mode_point(&self) -> &GridPoint {
        &self.points[self.mode_index]
    }
}

/// Standardized point, its approximation and log posterior.
type Evaluated = (Vec<f64>, GaussianApprox, f64);

struct Evaluator<'a> {
    model: &'a LatentModel,
    blocks: Vec<RandomBlock>,
    newton: NewtonConfig,
    warm: Option<Vec<f64>>,
    evaluations: usize,
}

impl Evaluator<'_> {
    fn theta(&self, z: &[f64]) -> Result<Hyperparameters> {
        Hyperparameters::from_log(self.blocks.clone(), z.to_vec())
    }

    /// Log posterior at `z`, `None` if the inner approximation fails.
    fn eval(&mut self, z: &[f64]) -> Option<f64> {
        self.evaluations += 1;
        let theta = self.theta(z).ok()?;
        match gaussian_approx(self.model, &theta, self.warm.as_deref(), &self.newton) {
            Ok(a) => {
                let lp = laplace_log_posterior(self.model, &a).ok()?;
                self.warm = Some(a.mode);
                lp.is_finite().then_some(lp)
            }
            Err(e) => {
                debug!("inner approximation failed at z = {z:?}: {e}");
                None
            }
        }
    }

    fn gradient(&mut self, z: &[f64], h: f64) -> Option<Vec<f64>> {
        let mut g = vec![0.0; z.len()];
        for i in 0..z.len() {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += h;
            zm[i] -= h;
            g[i] = (self.eval(&zp)? - self.eval(&zm)?) / (2.0 * h);
        }
        Some(g)
    }
}

fn clamp(z: &mut [f64], lo: f64, hi: f64) {
    z.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
}

/// BFGS ascent on the log posterior with finite-difference gradients.
fn find_mode(ev: &mut Evaluator<'_>, cfg: &GridConfig) -> Result<(Vec<f64>, f64)> {
    let d = ev.blocks.len();
    let mut z = cfg.initial.clone().unwrap_or_else(|| vec![0.0; d]);
    if z.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: z.len(),
        });
    }
    clamp(&mut z, cfg.lower, cfg.upper);
    let mut trace = Vec::new();
    let mut since_improvement = 0usize;
    let non_convergence = |ev: &Evaluator<'_>, trace: Vec<f64>| Error::NonConvergence {
        evaluations: ev.evaluations,
        trace,
    };

    // Find a finite starting value, pulling towards large precisions.
    let mut f = loop {
        let before = ev.evaluations;
        if let Some(v) = ev.eval(&z) {
            break v;
        }
        since_improvement += ev.evaluations - before;
        if since_improvement > cfg.stall_evaluations {
            return Err(non_convergence(ev, trace));
        }
        z.iter_mut().for_each(|v| *v += 1.0);
        clamp(&mut z, cfg.lower, cfg.upper);
    };
    trace.push(f);
    if d == 0 {
        return Ok((z, f));
    }
    let mut g = ev
        .gradient(&z, cfg.gradient_step)
        .ok_or_else(|| non_convergence(ev, trace.clone()))?;
    let mut hinv = DMatrix::<f64>::identity(d, d);
    for _ in 0..cfg.max_iterations {
        if g.iter().all(|v| v.abs() < 1e-4) {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut p = &hinv * &gv;
        if p.dot(&gv) <= 0.0 {
            hinv = DMatrix::identity(d, d);
            p = gv.clone();
        }
        let longest = p.amax();
        if longest > 3.0 {
            p *= 3.0 / longest;
        }
        let slope = p.dot(&gv);
        let mut alpha = 1.0;
        let mut next = None;
        while alpha > 1e-8 {
            let mut trial: Vec<f64> = z.iter().zip(p.iter()).map(|(a, b)| a + alpha * b).collect();
            clamp(&mut trial, cfg.lower, cfg.upper);
            let before = ev.evaluations;
            let value = ev.eval(&trial);
            since_improvement += ev.evaluations - before;
            if let Some(v) = value {
                if v > f && v >= f + 1e-4 * alpha * slope {
                    next = Some((trial, v));
                    break;
                }
            }
            if since_improvement > cfg.stall_evaluations {
                return Err(non_convergence(ev, trace));
            }
            alpha *= 0.5;
        }
        let Some((z_new, f_new)) = next else {
            debug!("mode search line search exhausted at z = {z:?}");
            break;
        };
        since_improvement = 0;
        trace.push(f_new);
        let g_new = match ev.gradient(&z_new, cfg.gradient_step) {
            Some(g) => g,
            None => return Err(non_convergence(ev, trace)),
        };
        let s = DVector::from_iterator(d, z_new.iter().zip(&z).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, g.iter().zip(&g_new).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-10 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - rho * &s * y.transpose();
            let right = &i - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let improvement = f_new - f;
        z = z_new;
        f = f_new;
        g = g_new;
        if improvement.abs() < 1e-10 * (1.0 + f.abs()) {
            break;
        }
    }
    Ok((z, f))
}

fn neg_hessian(ev: &mut Evaluator<'_>, z: &[f64], f0: f64, h: f64) -> DMatrix<f64> {
    let d = z.len();
    let at = |ev: &mut Evaluator<'_>, shifts: &[(usize, f64)]| {
        let mut p = z.to_vec();
        for &(i, s) in shifts {
            p[i] += s;
        }
        ev.eval(&p).unwrap_or(f0 - 1e6 * h * h)
    };
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = at(ev, &[(i, h)]);
        let fm = at(ev, &[(i, -h)]);
        out[(i, i)] = -(fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let fpp = at(ev, &[(i, h), (j, h)]);
            let fpm = at(ev, &[(i, h), (j, -h)]);
            let fmp = at(ev, &[(i, -h), (j, h)]);
            let fmm = at(ev, &[(i, -h), (j, -h)]);
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Laplace-grid exploration in `z = log τ`. Grid points are evaluated in parallel.
pub fn explore_hyperparameters(model: &LatentModel, config: &GridConfig) -> Result<HyperGrid> {
    let blocks = model.blocks();
    if blocks.len() > 5 {
        return Err(Error::InvalidDimension(format!(
            "at most 5 hyperparameters are supported, got {}",
            blocks.len()
        )));
    }
    let d = blocks.len();
    let mut ev = Evaluator {
        model,
        blocks: blocks.clone(),
        newton: config.newton,
        warm: None,
        evaluations: 0,
    };
    let (z_mode, f_mode) = find_mode(&mut ev, config)?;
    let mut h = neg_hessian(&mut ev, &z_mode, f_mode, config.hessian_step);
    let eig = h.clone().symmetric_eigen();
    let clamped: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(config.min_curvature)).collect();
    let vecs = eig.eigenvectors;
    h = &vecs * DMatrix::from_diagonal(&DVector::from_vec(clamped.clone())) * vecs.transpose();
    // z = z* + B u with B = V Λ^{-1/2}.
    let b = &vecs * DMatrix::from_diagonal(&DVector::from_iterator(d, clamped.iter().map(|l| l.sqrt().recip())));
    let warm = ev.warm.clone();
    let to_z = |u: &[f64]| -> Vec<f64> {
        let uv = DVector::from_column_slice(u);
        let dz = &b * uv;
        z_mode.iter().zip(dz.iter()).map(|(a, c)| a + c).collect()
    };
    let evaluate = |u: Vec<f64>| -> Option<(Vec<f64>, GaussianApprox, f64)> {
        let z = to_z(&u);
        let theta = Hyperparameters::from_log(blocks.clone(), z).ok()?;
        let approx = match gaussian_approx(model, &theta, warm.as_deref(), &config.newton) {
            Ok(a) => a,
            Err(e) => {
                warn!("grid point skipped: {e}");
                return None;
            }
        };
        let lp = laplace_log_posterior(model, &approx).ok()?;
        lp.is_finite().then_some((u, approx, lp))
    };

    let centre = evaluate(vec![0.0; d]).ok_or_else(|| Error::ApproximationFailed {
        theta: z_mode.iter().map(|z| z.exp()).collect(),
        reason: "inner approximation failed at the hyperparameter mode".into(),
    })?;
    let threshold = f_mode.max(centre.2) - config.drop;
    let mut evaluated = 1 + ev.evaluations;

    // Breadth-first walk over the lattice `u ∈ step·Zᵈ`, keeping every point
    // above the threshold. Equal lattice volumes make the weights a Riemann sum.
    let bound = config.max_steps as i64;
    let step = config.step_for(d);
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    seen.insert(vec![0; d]);
    let mut frontier: Vec<Vec<i64>> = vec![vec![0; d]];
    let (u0, a0, lp0) = centre;
    let mut raw: Vec<(Vec<f64>, GaussianApprox, f64, f64)> = vec![(u0, a0, lp0, 0.0)];
    while !frontier.is_empty() {
        let mut candidates = Vec::new();
        for key in &frontier {
            for i in 0..d {
                for s in [-1, 1] {
                    let mut next = key.clone();
                    next[i] += s;
                    if next[i].abs() <= bound && seen.insert(next.clone()) {
                        candidates.push(next);
                    }
                }
            }
        }
        if raw.len() + candidates.len() > config.max_points {
            warn!(
                "hyperparameter grid truncated at {} points; raise max_points or the drop threshold",
                raw.len()
            );
            break;
        }
        evaluated += candidates.len();
        let found: Vec<(Vec<i64>, Option<Evaluated>)> = candidates
            .into_par_iter()
            .map(|key| {
                let u = key.iter().map(|&k| k as f64 * step).collect();
                let p = evaluate(u);
                (key, p)
            })
            .collect();
        frontier = Vec::new();
        for (key, p) in found {
            if let Some((u, a, lp)) = p {
                if lp >= threshold {
                    raw.push((u, a, lp, 0.0));
                    frontier.push(key);
                }
            }
        }
    }

    raw.retain(|p| p.2 >= threshold);
    let log_w: Vec<f64> = raw.iter().map(|p| p.2 + p.3).collect();
    let max_w = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|w| (w - max_w).exp()).sum();
    let mut points: Vec<GridPoint> = raw
        .into_par_iter()
        .zip(log_w.par_iter())
        .map(|((u, approx, lp, lv), lw)| {
            let mut mean = approx.mode.clone();
            for (m, s) in mean.iter_mut().zip(approx.mean_correction(model)?) {
                *m += s;
            }
            Ok(GridPoint {
                z: approx.theta.log_precisions().to_vec(),
                u,
                log_posterior: lp,
                log_volume: lv,
                weight: (lw - max_w).exp() / total,
                mean,
                approx,
            })
        })
        .collect::<Result<_>>()?;
    // Stable order: lexicographic in u.
    points.sort_by(|a, b| {
        a.u.iter()
            .zip(&b.u)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mode_index = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.log_posterior.total_cmp(&b.1.log_posterior))
        .map(|(i, _)| i)
        .expect("centre point is always retained");
    debug!("hyperparameter grid: {} points, {} evaluations", points.len(), evaluated);
    Ok(HyperGrid {
        blocks,
        points,
        mode_index,
        mode: z_mode,
        neg_hessian: h,
        evaluations: evaluated,
        step,
    })
}
