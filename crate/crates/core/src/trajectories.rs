//! Monte Carlo simulation of the conditional mean and the measurement record.
//!
//! The mean obeys `dμ = Aᵀμ dt + Σ_t B dW` and the integrated readouts
//! `dR = μ dt + diag(1/√(ηk)) dW`, with the same Wiener increments in both.
//! The covariance path `Σ_t` is deterministic and shared by every trajectory.
//!
//! Random streams: trajectory `i` of an ensemble seeded with `seed` draws
//! from `ChaCha8Rng::seed_from_u64(seed)` switched to stream `i`. Results do
//! not depend on how trajectories are scheduled over threads.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::CovTrajectory;
use crate::error::{Error, Result};
use crate::linalg2::{SymMat2, Vec2};
use crate::model::SystemMatrices;
use crate::output::{write_header, write_row};

pub const TRAJECTORY_CSV_HEADER: [&str; 5] = ["t", "mu_x", "mu_p", "R_x", "R_p"];

pub const ENSEMBLE_CSV_HEADER: [&str; 8] = [
    "t",
    "mean_mu_x",
    "mean_mu_p",
    "cov_xx",
    "cov_xp",
    "cov_pp",
    "stderr_mu_x",
    "stderr_mu_p",
];

/// Trajectories simulated per parallel batch before folding into the statistics.
const BATCH: usize = 256;

/// One simulated conditional-mean path and its integrated readouts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub mu: Vec<Vec2>,
    pub r_x: Vec<f64>,
    pub r_p: Vec<f64>,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_header(w, &TRAJECTORY_CSV_HEADER)?;
        for i in 0..self.len() {
            write_row(w, &[self.times[i], self.mu[i][0], self.mu[i][1], self.r_x[i], self.r_p[i]])?;
        }
        Ok(())
    }
}

/// Source of the per-step Wiener increments `ΔW ~ N(0, h·I₂)`.
pub trait IncrementSource {
    fn increments(&mut self, h: f64) -> Vec2;
}

pub struct GaussianIncrements {
    rng: ChaCha8Rng,
}

impl GaussianIncrements {
    pub fn new(seed: u64, stream: u64) -> Self {
        GaussianIncrements {
            rng: stream_rng(seed, stream),
        }
    }
}

impl IncrementSource for GaussianIncrements {
    fn increments(&mut self, h: f64) -> Vec2 {
        let scale = h.sqrt();
        let x: f64 = self.rng.sample(StandardNormal);
        let p: f64 = self.rng.sample(StandardNormal);
        [scale * x, scale * p]
    }
}

/// Noise-free driver; reduces the mean to the Hamiltonian flow.
pub struct ZeroIncrements;

impl IncrementSource for ZeroIncrements {
    fn increments(&mut self, _h: f64) -> Vec2 {
        [0.0, 0.0]
    }
}

/// Generator for trajectory `stream` of an ensemble seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Checks that the covariance path steps by `dt`, allowing a shorter final step.
fn check_grid(path: &CovTrajectory, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("dt", "must be a finite positive number"));
    }
    if path.is_empty() || path.times[0] != 0.0 {
        return Err(Error::invalid("sigma_path", "must start at t = 0"));
    }
    let n = path.len();
    for (i, w) in path.times.windows(2).enumerate() {
        let h = w[1] - w[0];
        let last = i + 2 == n;
        let ok = if last {
            h > 0.0 && h <= dt * (1.0 + 1e-9)
        } else {
            (h - dt).abs() <= 1e-9 * dt
        };
        if !ok {
            return Err(Error::invalid(
                "sigma_path",
                format!("grid step {h} at index {i} does not match dt = {dt}"),
            ));
        }
    }
    Ok(())
}

/// Euler–Maruyama path on the grid of `sigma_path`, recording every step.
pub fn simulate_trajectory(
    mu0: Vec2,
    sigma_path: &CovTrajectory,
    sys: &SystemMatrices,
    dt: f64,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut noise = GaussianIncrements::new(seed, 0);
    simulate_with(mu0, sigma_path, sys, dt, 1, seed, &mut noise)
}

/// Euler–Maruyama path driven by an arbitrary increment source, recording
/// every `record_every`-th grid point plus the final one.
pub fn simulate_with<N: IncrementSource>(
    mu0: Vec2,
    sigma_path: &CovTrajectory,
    sys: &SystemMatrices,
    dt: f64,
    record_every: usize,
    seed: u64,
    noise: &mut N,
) -> Result<TrajectoryRecord> {
    check_grid(sigma_path, dt)?;
    if record_every == 0 {
        return Err(Error::invalid("record_every", "must be at least 1"));
    }
    if !(mu0[0].is_finite() && mu0[1].is_finite()) {
        return Err(Error::invalid("mu0", "must be finite"));
    }
    let drift = sys.a.transpose();
    let gain = [sys.b.a11, sys.b.a22];
    let readout_scale = [1.0 / gain[0], 1.0 / gain[1]];
    let steps = sigma_path.len() - 1;
    let cap = steps / record_every + 2;
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(cap),
        mu: Vec::with_capacity(cap),
        r_x: Vec::with_capacity(cap),
        r_p: Vec::with_capacity(cap),
        seed,
    };
    let mut mu = mu0;
    let mut r = [0.0, 0.0];
    rec.times.push(0.0);
    rec.mu.push(mu);
    rec.r_x.push(0.0);
    rec.r_p.push(0.0);
    for n in 0..steps {
        let h = sigma_path.times[n + 1] - sigma_path.times[n];
        let dw = noise.increments(h);
        let sigma = sigma_path.covs[n];
        let flow = drift.apply(mu);
        // Σ_t B ΔW with B diagonal
        let kick = [
            sigma.xx * gain[0] * dw[0] + sigma.xp * gain[1] * dw[1],
            sigma.xp * gain[0] * dw[0] + sigma.pp * gain[1] * dw[1],
        ];
        r[0] += mu[0] * h + readout_scale[0] * dw[0];
        r[1] += mu[1] * h + readout_scale[1] * dw[1];
        mu = [mu[0] + flow[0] * h + kick[0], mu[1] + flow[1] * h + kick[1]];
        if !(mu[0].is_finite() && mu[1].is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "conditional mean became non-finite at t = {}",
                sigma_path.times[n + 1]
            )));
        }
        let k = n + 1;
        if k % record_every == 0 || k == steps {
            rec.times.push(sigma_path.times[k]);
            rec.mu.push(mu);
            rec.r_x.push(r[0]);
            rec.r_p.push(r[1]);
        }
    }
    Ok(rec)
}

/// Pointwise sample statistics of the conditional mean across trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub times: Vec<f64>,
    pub mean_mu: Vec<Vec2>,
    /// Unbiased sample covariance of `μ_t` across trajectories.
    pub cov_mu: Vec<SymMat2>,
    /// Standard error of each component of `mean_mu`. Zero where the
    /// ensemble has no spread, e.g. at `t = 0` for a fixed `μ₀`.
    pub stderr: Vec<Vec2>,
}

impl EnsembleStats {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        write_header(w, &ENSEMBLE_CSV_HEADER)?;
        for i in 0..self.times.len() {
            let m = self.mean_mu[i];
            let c = self.cov_mu[i];
            let e = self.stderr[i];
            write_row(w, &[self.times[i], m[0], m[1], c.xx, c.xp, c.pp, e[0], e[1]])?;
        }
        Ok(())
    }
}

/// Streaming Welford accumulator; records must be pushed in a fixed order
/// for bit-reproducible results.
#[derive(Debug, Clone)]
pub struct EnsembleAccumulator {
    n: usize,
    times: Vec<f64>,
    mean: Vec<Vec2>,
    // running sums of centred products (xx, xp, pp)
    m2: Vec<[f64; 3]>,
}

impl EnsembleAccumulator {
    pub fn new() -> Self {
        EnsembleAccumulator {
            n: 0,
            times: Vec::new(),
            mean: Vec::new(),
            m2: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        if self.n == 0 {
            self.times = rec.times.clone();
            self.mean = vec![[0.0, 0.0]; rec.len()];
            self.m2 = vec![[0.0; 3]; rec.len()];
        } else if rec.times != self.times {
            return Err(Error::invalid("records", "trajectories are on different time grids"));
        }
        self.n += 1;
        let n = self.n as f64;
        for (i, mu) in rec.mu.iter().enumerate() {
            let dx = mu[0] - self.mean[i][0];
            let dp = mu[1] - self.mean[i][1];
            self.mean[i][0] += dx / n;
            self.mean[i][1] += dp / n;
            let ex = mu[0] - self.mean[i][0];
            let ep = mu[1] - self.mean[i][1];
            self.m2[i][0] += dx * ex;
            self.m2[i][1] += dx * ep;
            self.m2[i][2] += dp * ep;
        }
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn means(&self) -> &[Vec2] {
        &self.mean
    }

    pub fn finish(self) -> Result<EnsembleStats> {
        if self.n < 2 {
            return Err(Error::invalid("records", "ensemble statistics need at least two trajectories"));
        }
        let denom = (self.n - 1) as f64;
        let n = self.n as f64;
        let cov_mu: Vec<SymMat2> = self
            .m2
            .iter()
            .map(|m| SymMat2::new(m[0] / denom, m[1] / denom, m[2] / denom))
            .collect();
        let stderr = cov_mu
            .iter()
            .map(|c| [(c.xx.max(0.0) / n).sqrt(), (c.pp.max(0.0) / n).sqrt()])
            .collect();
        Ok(EnsembleStats {
            n_traj: self.n,
            times: self.times,
            mean_mu: self.mean,
            cov_mu,
            stderr,
        })
    }
}

impl Default for EnsembleAccumulator {
    fn default() -> Self {
        EnsembleAccumulator::new()
    }
}

pub fn ensemble_statistics(records: &[TrajectoryRecord]) -> Result<EnsembleStats> {
    let mut acc = EnsembleAccumulator::new();
    for r in records {
        acc.push(r)?;
    }
    acc.finish()
}

/// Settings for [`run_ensemble`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub mu0: Vec2,
    pub dt: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub record_every: usize,
    /// Worker threads; 0 lets the runtime decide.
    pub threads: usize,
    /// How many leading trajectories to return in full.
    pub keep: usize,
}

/// Outcome of an ensemble run: the streamed statistics and the first
/// `keep` trajectories.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub accumulator: EnsembleAccumulator,
    pub kept: Vec<TrajectoryRecord>,
}

/// Simulates `n_traj` independent trajectories in parallel.
///
/// Trajectory `i` uses stream `i` of `seed`; results are folded in index
/// order, so the output is identical for every thread count.
pub fn run_ensemble(
    cfg: &EnsembleConfig,
    sigma_path: &CovTrajectory,
    sys: &SystemMatrices,
) -> Result<EnsembleRun> {
    if cfg.n_traj == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    check_grid(sigma_path, cfg.dt)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::NumericalFailure(format!("thread pool: {e}")))?;
    let mut acc = EnsembleAccumulator::new();
    let mut kept = Vec::with_capacity(cfg.keep.min(cfg.n_traj));
    let mut start = 0usize;
    while start < cfg.n_traj {
        let end = (start + BATCH).min(cfg.n_traj);
        let batch: Vec<Result<TrajectoryRecord>> = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|i| {
                    let mut noise = GaussianIncrements::new(cfg.seed, i as u64);
                    simulate_with(cfg.mu0, sigma_path, sys, cfg.dt, cfg.record_every, cfg.seed, &mut noise)
                        .map_err(|e| match e {
                            Error::NumericalFailure(msg) => {
                                Error::NumericalFailure(format!("trajectory {i}: {msg}"))
                            }
                            other => other,
                        })
                })
                .collect()
        });
        for rec in batch {
            let rec = rec?;
            acc.push(&rec)?;
            if kept.len() < cfg.keep {
                kept.push(rec);
            }
        }
        start = end;
    }
    Ok(EnsembleRun { accumulator: acc, kept })
}
