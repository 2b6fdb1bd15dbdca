use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{DynamicsError, SDESystem};
use crate::fields::Field;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// First output of the SplitMix64 generator started from `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the ChaCha8 substream for one path:
/// `splitmix64(seed ^ splitmix64(path))`. Depends only on its arguments, so
/// ensembles do not depend on the parallel schedule.
pub fn path_seed(seed: u64, path: usize) -> u64 {
    splitmix64(seed ^ splitmix64(path as u64))
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(path_seed(seed, path))
}

/// Brownian increments for one step, drawn in noise-index order.
pub(crate) fn draw_increments(rng: &mut ChaCha8Rng, h: f64, out: &mut [f64]) {
    let s = h.sqrt();
    for o in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *o = s * z;
    }
}

/// Which integration steps are stored.
#[derive(Debug, Clone, PartialEq)]
pub enum Recording {
    /// Every `k`-th step, plus the final one.
    Stride(usize),
    /// Explicit step indices. Step 0 is always stored; indices past the
    /// last step are rejected.
    Steps(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub recording: Recording,
    pub store_increments: bool,
    pub divergence_radius: f64,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            t_end,
            dt,
            n_paths,
            seed,
            recording: Recording::Stride(1),
            store_increments: true,
            divergence_radius: 1e8,
        }
    }

    /// Number of integration steps; the last one is shortened to end at `t_end`.
    pub fn steps(&self) -> usize {
        ((self.t_end / self.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    /// Time of integration step `k`.
    pub fn step_time(&self, k: usize) -> f64 {
        if k >= self.steps() {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }

    /// Step index whose time is nearest to `t`.
    pub fn nearest_step(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.steps())
    }

    pub(crate) fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("T must be positive, got {}", self.t_end)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_paths == 0 {
            return Err(DynamicsError::InvalidConfig("at least one path is required".into()));
        }
        if let Recording::Stride(0) = self.recording {
            return Err(DynamicsError::InvalidConfig("stride must be positive".into()));
        }
        Ok(())
    }

    /// Sorted, deduplicated stored step indices, always starting at 0.
    pub fn recorded_steps(&self) -> Result<Vec<usize>, DynamicsError> {
        let n = self.steps();
        let mut steps = match &self.recording {
            Recording::Stride(k) => {
                let mut v: Vec<usize> = (0..=n).step_by((*k).max(1)).collect();
                v.push(n);
                v
            }
            Recording::Steps(list) => {
                if let Some(bad) = list.iter().find(|&&s| s > n) {
                    return Err(DynamicsError::InvalidConfig(format!(
                        "recorded step {bad} exceeds the last step {n}"
                    )));
                }
                let mut v = list.clone();
                v.push(0);
                v
            }
        };
        steps.sort_unstable();
        steps.dedup();
        Ok(steps)
    }
}

/// Seeded Monte Carlo paths. States are laid out path-major as
/// `[path][time][coordinate]`; increments as `[path][interval][noise]`,
/// each interval aggregating the Brownian increments between stored times.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub seed: u64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub n_paths: usize,
    pub dim: usize,
    pub noise: usize,
    pub states: Vec<f64>,
    pub increments: Option<Vec<f64>>,
    /// Paths that left the divergence radius or became non-finite; their
    /// states after the failure are NaN.
    pub blown_up: Vec<bool>,
}

impl PathEnsemble {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn blow_up_count(&self) -> usize {
        self.blown_up.iter().filter(|b| **b).count()
    }

    pub fn state(&self, path: usize, time: usize) -> &[f64] {
        let o = (path * self.n_times() + time) * self.dim;
        &self.states[o..o + self.dim]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let w = self.n_times() * self.dim;
        &self.states[path * w..(path + 1) * w]
    }

    pub fn increment(&self, path: usize, interval: usize) -> Option<&[f64]> {
        let inc = self.increments.as_ref()?;
        let o = (path * (self.n_times() - 1) + interval) * self.noise;
        Some(&inc[o..o + self.noise])
    }

    /// Values of one coordinate at one stored time over the surviving paths.
    pub fn coordinate_samples(&self, time: usize, coord: usize) -> Vec<f64> {
        (0..self.n_paths)
            .filter(|&p| !self.blown_up[p])
            .map(|p| self.state(p, time)[coord])
            .collect()
    }

    /// Index of the stored time nearest to `t`.
    pub fn nearest_time_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    /// CSV with header `path_id,time,x1,...,xN`, one row per path and stored time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "path_id,time")?;
        for i in 0..self.dim {
            write!(w, ",x{}", i + 1)?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths {
            for (k, t) in self.times.iter().enumerate() {
                write!(w, "{p},{t}")?;
                for v in self.state(p, k) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Work buffers for one stochastic Heun step.
pub(crate) struct HeunScratch {
    f0: Vec<f64>,
    f0p: Vec<f64>,
    g: Vec<f64>,
    gp: Vec<f64>,
    pred: Vec<f64>,
}

impl HeunScratch {
    pub(crate) fn new(n: usize, d: usize) -> Self {
        HeunScratch {
            f0: vec![0.0; n],
            f0p: vec![0.0; n],
            g: vec![0.0; n * d],
            gp: vec![0.0; n * d],
            pred: vec![0.0; n],
        }
    }

    /// One Stratonovich Heun step of `dX = V0 dt + sqrt(2) sum Vi o dB^i`.
    /// Predictor of the most recent step.
    pub(crate) fn predictor(&self) -> &[f64] {
        &self.pred
    }

    pub(crate) fn step(&mut self, sys: &SDESystem, x: &mut [f64], h: f64, dw: &[f64]) {
        let n = x.len();
        let s2 = std::f64::consts::SQRT_2;
        sys.drift.eval_into(x, &mut self.f0);
        for (i, v) in sys.noise.iter().enumerate() {
            v.eval_into(x, &mut self.g[i * n..(i + 1) * n]);
        }
        for j in 0..n {
            let mut noise = 0.0;
            for (i, w) in dw.iter().enumerate() {
                noise += self.g[i * n + j] * w;
            }
            self.pred[j] = x[j] + h * self.f0[j] + s2 * noise;
        }
        sys.drift.eval_into(&self.pred, &mut self.f0p);
        for (i, v) in sys.noise.iter().enumerate() {
            v.eval_into(&self.pred, &mut self.gp[i * n..(i + 1) * n]);
        }
        for j in 0..n {
            let mut noise = 0.0;
            for (i, w) in dw.iter().enumerate() {
                noise += (self.g[i * n + j] + self.gp[i * n + j]) * w;
            }
            x[j] += 0.5 * h * (self.f0[j] + self.f0p[j]) + 0.5 * s2 * noise;
        }
    }
}

pub(crate) fn out_of_bounds(x: &[f64], radius: f64) -> bool {
    x.iter().any(|v| !v.is_finite()) || x.iter().map(|v| v * v).sum::<f64>().sqrt() > radius
}

/// Stochastic Heun simulation of `system` from `x0`.
pub fn simulate_paths(system: &SDESystem, x0: &[f64], cfg: &SimConfig) -> Result<PathEnsemble, DynamicsError> {
    cfg.validate()?;
    let n = system.dim();
    if x0.len() != n {
        return Err(DynamicsError::InvalidConfig(format!(
            "initial point has {} coordinates, system has {n}",
            x0.len()
        )));
    }
    let d = system.noise_count();
    let steps = cfg.recorded_steps()?;
    let times: Vec<f64> = steps.iter().map(|&k| cfg.step_time(k)).collect();
    let nt = steps.len();
    let total = cfg.steps();

    let mut states = vec![0.0; cfg.n_paths * nt * n];
    let mut increments = if cfg.store_increments {
        Some(vec![0.0; cfg.n_paths * (nt - 1) * d])
    } else {
        None
    };
    let mut blown_up = vec![false; cfg.n_paths];

    let run = |p: usize, out: &mut [f64], inc: Option<&mut [f64]>, blown: &mut bool| {
        let mut rng = path_rng(cfg.seed, p);
        let mut scratch = HeunScratch::new(n, d);
        let mut x = x0.to_vec();
        let mut dw = vec![0.0; d];
        let mut acc = vec![0.0; d];
        let mut inc = inc;
        out[..n].copy_from_slice(&x);
        let mut slot = 1;
        for k in 0..total {
            let h = cfg.step_time(k + 1) - cfg.step_time(k);
            draw_increments(&mut rng, h, &mut dw);
            if !*blown {
                scratch.step(system, &mut x, h, &dw);
                if out_of_bounds(&x, cfg.divergence_radius) {
                    *blown = true;
                }
            }
            for (a, w) in acc.iter_mut().zip(&dw) {
                *a += w;
            }
            if slot < nt && steps[slot] == k + 1 {
                let dst = &mut out[slot * n..(slot + 1) * n];
                if *blown {
                    dst.fill(f64::NAN);
                } else {
                    dst.copy_from_slice(&x);
                }
                if let Some(inc) = inc.as_deref_mut() {
                    inc[(slot - 1) * d..slot * d].copy_from_slice(&acc);
                }
                acc.fill(0.0);
                slot += 1;
            }
        }
    };

    let chunk = nt * n;
    match increments.as_mut().filter(|inc| !inc.is_empty()) {
        Some(inc) => {
            let ichunk = (nt - 1) * d;
            states
                .par_chunks_mut(chunk)
                .zip(inc.par_chunks_mut(ichunk))
                .zip(blown_up.par_iter_mut())
                .enumerate()
                .for_each(|(p, ((out, inc), blown))| run(p, out, Some(inc), blown));
        }
        None => {
            states
                .par_chunks_mut(chunk)
                .zip(blown_up.par_iter_mut())
                .enumerate()
                .for_each(|(p, (out, blown))| run(p, out, None, blown));
        }
    }

    Ok(PathEnsemble {
        seed: cfg.seed,
        dt: cfg.dt,
        times,
        steps,
        n_paths: cfg.n_paths,
        dim: n,
        noise: d,
        states,
        increments,
        blown_up,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::VectorField;

    #[test]
    fn splitmix_reference_values() {
        // Reference outputs of the SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(GOLDEN_GAMMA), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(splitmix64(GOLDEN_GAMMA.wrapping_mul(2)), 0x06C4_5D18_8009_454F);
    }

    fn ou() -> SDESystem {
        SDESystem::new(
            "ou",
            vec!["x".into()],
            VectorField::parse(&["-x"], &["x"]).unwrap(),
            vec![VectorField::parse(&["1"], &["x"]).unwrap()],
        )
        .unwrap()
    }

    #[test]
    fn time_grid_and_recording() {
        let mut cfg = SimConfig::new(0.25, 0.1, 2, 7);
        assert_eq!(cfg.steps(), 3);
        cfg.recording = Recording::Stride(2);
        assert_eq!(cfg.recorded_steps().unwrap(), vec![0, 2, 3]);
        let ens = simulate_paths(&ou(), &[1.0], &cfg).unwrap();
        assert_eq!(ens.times, vec![0.0, 0.2, 0.25]);
        let a = ens.increment(0, 0).unwrap()[0];
        let b = ens.increment(0, 1).unwrap()[0];
        let mut rng = path_rng(7, 0);
        let mut w = [0.0];
        let mut total = 0.0;
        for k in 0..3 {
            draw_increments(&mut rng, cfg.step_time(k + 1) - cfg.step_time(k), &mut w);
            total += w[0];
        }
        assert!((a + b - total).abs() < 1e-15);
    }

    #[test]
    fn reproducible_and_schedule_free() {
        let cfg = SimConfig::new(0.5, 0.01, 64, 42);
        let a = simulate_paths(&ou(), &[1.0], &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| simulate_paths(&ou(), &[1.0], &cfg).unwrap());
        assert_eq!(a.states, b.states);
        assert_eq!(a.increments, b.increments);
    }

    #[test]
    fn blow_up_flags_path() {
        let sys = SDESystem::new(
            "explode",
            vec!["x".into()],
            VectorField::parse(&["x*x"], &["x"]).unwrap(),
            vec![VectorField::parse(&["0"], &["x"]).unwrap()],
        )
        .unwrap();
        let ens = simulate_paths(&sys, &[1.0], &SimConfig::new(2.0, 1e-2, 3, 1)).unwrap();
        assert_eq!(ens.blow_up_count(), 3);
        assert!(ens.state(0, ens.n_times() - 1)[0].is_nan());
    }

    #[test]
    fn noiseless_system_follows_the_drift() {
        let v0 = VectorField::parse(&["-y", "x"], &["x", "y"]).unwrap();
        let sys = SDESystem::new("rot", vec!["x".into(), "y".into()], v0.clone(), vec![VectorField::zero(2)]).unwrap();
        let ens = simulate_paths(&sys, &[1.0, 0.0], &SimConfig::new(1.0, 1e-3, 2, 5)).unwrap();
        let exact = crate::dynamics::flow(&v0, &[1.0, 0.0], 1.0, &crate::dynamics::FlowConfig::default()).unwrap();
        let last = ens.n_times() - 1;
        for p in 0..2 {
            let x = ens.state(p, last);
            assert!((x[0] - exact[0]).abs() < 1e-6 && (x[1] - exact[1]).abs() < 1e-6);
        }
    }
}
