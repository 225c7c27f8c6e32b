//! Brute-force verification oracle for the closed-form solver.
//!
//! Minimizes the aggregation error directly over the box
//! `0 <= p_k <= P_k, eta > 0` without using any of the structural facts the
//! closed form relies on (capability ordering, peak-power prefixes, threshold
//! candidates). The search runs multi-start projected coordinate descent with
//! golden-section line searches in the substituted coordinates
//! `x_k = sqrt(p_k)` and `u = 1/sqrt(eta)`, where the objective is convex
//! along every coordinate; for small device counts a dense grid seeds one
//! extra start. Slow and dumb on purpose.

use rand::Rng;

use crate::channel::NoiseSpec;
use crate::mse::mse_ab;
use crate::optimizer::{AggregationProfile, OptimizerError, PowerSolution};
use crate::seed::derive_rng;
use crate::stats::GradientStats;

const GOLDEN_RATIO_CONJ: f64 = 0.618_033_988_749_894_9;
const GOLDEN_RATIO_CONJ2: f64 = 0.381_966_011_250_105_2;
const MAX_GOLDEN_ITERS: usize = 90;
const MAX_LADDER_STEPS: usize = 320;

#[derive(Debug, Clone)]
pub struct OracleOptions {
    /// Number of random restarts (a full-power start and, for K <= 3, a
    /// grid-seeded start are added on top).
    pub restarts: usize,
    /// Coordinate-descent sweeps per start.
    pub max_sweeps: usize,
    /// Objective evaluation budget across the whole call.
    pub budget: u64,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { restarts: 50, max_sweeps: 200, budget: 50_000_000, seed: 0x0bac1e }
    }
}

impl OracleOptions {
    pub fn with_budget(budget: u64) -> Self {
        Self { budget, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub solution: PowerSolution,
    pub evaluations: u64,
    /// True when the evaluation budget ran out before all starts finished;
    /// the result is then only the best point found so far.
    pub budget_exhausted: bool,
}

/// `(sum_k (x_k c_k u - 1)^2, sum_k x_k c_k u)` evaluator with a budget meter.
struct Objective {
    /// per-device `|h_k| / sqrt(alpha)`, capability order
    gain: Vec<f64>,
    w_individual: f64,
    w_composite: f64,
    noise_energy: f64,
    evaluations: u64,
}

impl Objective {
    fn eval_point(&mut self, x: &[f64], u: f64) -> f64 {
        self.evaluations += 1;
        let k = x.len() as f64;
        let mut dev_sq = 0.0;
        let mut level_sum = 0.0;
        for (&xi, &ci) in x.iter().zip(&self.gain) {
            let g = xi * ci * u;
            dev_sq += (g - 1.0) * (g - 1.0);
            level_sum += g;
        }
        self.w_individual * dev_sq
            + self.w_composite * (level_sum - k) * (level_sum - k)
            + self.noise_energy * u * u
    }

    /// Evaluate with coordinate `k` overridden to `t`, without mutating the
    /// caller's point.
    fn eval_coord(&mut self, x: &[f64], k: usize, t: f64, u: f64) -> f64 {
        self.evaluations += 1;
        let kf = x.len() as f64;
        let mut dev_sq = 0.0;
        let mut level_sum = 0.0;
        for (i, (&xi, &ci)) in x.iter().zip(&self.gain).enumerate() {
            let v = if i == k { t } else { xi };
            let g = v * ci * u;
            dev_sq += (g - 1.0) * (g - 1.0);
            level_sum += g;
        }
        self.w_individual * dev_sq
            + self.w_composite * (level_sum - kf) * (level_sum - kf)
            + self.noise_energy * u * u
    }
}

/// Golden-section minimum of a unimodal function on `[a, b]`.
fn golden_min(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    if !(b > a) {
        return a;
    }
    let tol = 1e-12 * (b - a) + 1e-300;
    let (mut lo, mut hi) = (a, b);
    let mut h = hi - lo;
    let mut c = lo + GOLDEN_RATIO_CONJ2 * h;
    let mut d = lo + GOLDEN_RATIO_CONJ * h;
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..MAX_GOLDEN_ITERS {
        if h <= tol {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            h = hi - lo;
            c = lo + GOLDEN_RATIO_CONJ2 * h;
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            h = hi - lo;
            d = lo + GOLDEN_RATIO_CONJ * h;
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Minimize over `u` by geometric bracketing followed by golden section.
/// The objective is convex in `u`, so the first rise past the minimum
/// brackets it.
fn minimize_u(obj: &mut Objective, x: &[f64], u_floor: f64) -> f64 {
    let mut prev2 = u_floor;
    let mut prev = u_floor;
    let mut f_prev = obj.eval_point(x, prev);
    let mut cur = u_floor * 2.0;
    let mut bracket_hi = None;
    for _ in 0..MAX_LADDER_STEPS {
        let f_cur = obj.eval_point(x, cur);
        if f_cur > f_prev {
            bracket_hi = Some(cur);
            break;
        }
        prev2 = prev;
        prev = cur;
        f_prev = f_cur;
        cur *= 2.0;
    }
    let (lo, hi) = match bracket_hi {
        Some(hi) => (prev2, hi),
        None => (prev2, cur),
    };
    let best = golden_min(lo, hi, |u| obj.eval_point(x, u));
    best.max(u_floor)
}

fn descend(
    obj: &mut Objective,
    x: &mut [f64],
    x_max: &[f64],
    u_floor: f64,
    max_sweeps: usize,
    budget: u64,
) -> (f64, f64, bool) {
    let mut u = minimize_u(obj, x, u_floor);
    let mut f = obj.eval_point(x, u);
    for _ in 0..max_sweeps {
        let f_before = f;
        for k in 0..x.len() {
            x[k] = golden_min(0.0, x_max[k], |t| obj.eval_coord(x, k, t, u));
            if obj.evaluations > budget {
                return (obj.eval_point(x, u), u, true);
            }
        }
        u = minimize_u(obj, x, u_floor);
        f = obj.eval_point(x, u);
        if obj.evaluations > budget {
            return (f, u, true);
        }
        if f_before - f <= 1e-15 * (1.0 + f.abs()) {
            break;
        }
    }
    (f, u, false)
}

/// Structure-free minimization of the aggregation error over the feasible
/// box. Returns the best point found, the evaluation count and whether the
/// budget ran out first.
pub fn oracle_solve(
    profile: &AggregationProfile,
    stats: &GradientStats,
    noise: &NoiseSpec,
    options: &OracleOptions,
) -> Result<OracleSolution, OptimizerError> {
    if !stats.alpha.is_finite() || stats.alpha <= 0.0 {
        return Err(OptimizerError::NonPositiveAlpha(stats.alpha));
    }
    if stats.beta.is_nan() || stats.beta < 0.0 {
        return Err(OptimizerError::InvalidBeta(stats.beta));
    }
    let k = profile.device_count();
    let channels = profile.sorted_channels();
    let sqrt_alpha = stats.alpha.sqrt();
    let gain: Vec<f64> = channels.iter().map(|ch| ch.magnitude / sqrt_alpha).collect();
    let x_max: Vec<f64> = channels.iter().map(|ch| ch.peak_power.sqrt()).collect();
    let level_scale = gain
        .iter()
        .zip(&x_max)
        .map(|(c, x)| c * x)
        .fold(0.0_f64, f64::max);
    if level_scale == 0.0 {
        return Err(OptimizerError::AllChannelsZero);
    }
    let u_floor = 1e-9 / level_scale;

    let (w_individual, w_composite) = stats.error_weights();
    let mut obj = Objective {
        gain,
        w_individual,
        w_composite,
        noise_energy: noise.block_energy(),
        evaluations: 0,
    };

    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(options.restarts + 2);
    starts.push(x_max.clone()); // full-power corner
    if k <= 3 {
        starts.push(grid_seed(&mut obj, &x_max, u_floor));
    }
    let mut rng = derive_rng(options.seed, &[k as u64]);
    for _ in 0..options.restarts {
        starts.push(x_max.iter().map(|&m| rng.gen::<f64>() * m).collect());
    }

    let mut best_f = f64::INFINITY;
    let mut best_x = x_max.clone();
    let mut best_u = u_floor;
    let mut exhausted = false;
    for start in starts {
        let mut x = start;
        let (f, u, over) =
            descend(&mut obj, &mut x, &x_max, u_floor, options.max_sweeps, options.budget);
        if f < best_f {
            best_f = f;
            best_x = x;
            best_u = u;
        }
        if over {
            exhausted = true;
            break;
        }
    }

    let eta = 1.0 / (best_u * best_u);
    let powers_sorted: Vec<f64> = best_x
        .iter()
        .zip(channels)
        .map(|(x, ch)| (x * x).min(ch.peak_power))
        .collect();
    let mse = mse_ab(stats, &powers_sorted, channels, eta, noise)?;
    // informational only: length of the at-peak prefix in capability order
    let l_star = powers_sorted
        .iter()
        .zip(channels)
        .take_while(|(p, ch)| **p >= ch.peak_power * (1.0 - 1e-6))
        .count();
    let mut powers = vec![0.0; k];
    for (pos, &orig) in profile.sorted_indices().iter().enumerate() {
        powers[orig] = powers_sorted[pos];
    }
    Ok(OracleSolution {
        solution: PowerSolution { powers, eta, l_star, mse },
        evaluations: obj.evaluations,
        budget_exhausted: exhausted,
    })
}

/// Coarse dense scan over the box for small K; returns the best grid corner
/// as an extra descent start.
fn grid_seed(obj: &mut Objective, x_max: &[f64], u_floor: f64) -> Vec<f64> {
    let k = x_max.len();
    let x_points = 13usize;
    let u_points = 25usize;
    // log-spaced u grid spanning the bracket found from the full-power corner
    let u_hi = {
        let mut u = u_floor;
        let mut f_prev = obj.eval_point(x_max, u);
        for _ in 0..MAX_LADDER_STEPS {
            let next = u * 2.0;
            let f_next = obj.eval_point(x_max, next);
            if f_next > f_prev {
                break;
            }
            u = next;
            f_prev = f_next;
        }
        u * 8.0
    };
    let log_lo = (u_floor * 10.0).ln();
    let log_hi = u_hi.ln();
    let mut best = (f64::INFINITY, vec![0.0; k]);
    let mut idx = vec![0usize; k];
    loop {
        let x: Vec<f64> = idx
            .iter()
            .zip(x_max)
            .map(|(&i, &m)| m * i as f64 / (x_points - 1) as f64)
            .collect();
        for j in 0..u_points {
            let u = (log_lo + (log_hi - log_lo) * j as f64 / (u_points - 1) as f64).exp();
            let f = obj.eval_point(&x, u);
            if f < best.0 {
                best = (f, x.clone());
            }
        }
        // odometer over the x grid
        let mut carry = true;
        for slot in idx.iter_mut() {
            if carry {
                *slot += 1;
                if *slot == x_points {
                    *slot = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_rayleigh_channels, DeviceChannel};
    use crate::optimizer::{build_profile, solve};

    fn channel(magnitude: f64, peak_power: f64) -> DeviceChannel {
        DeviceChannel::new(magnitude, 0.0, peak_power).unwrap()
    }

    #[test]
    fn single_device_matches_closed_form() {
        let profile = build_profile(&[channel(0.8, 3.0)], 0.6).unwrap();
        let stats = GradientStats::new(0.6, 1.3);
        let noise = NoiseSpec::new(1.0, 2).unwrap();
        let exact = solve(&profile, &stats, &noise).unwrap();
        let oracle = oracle_solve(&profile, &stats, &noise, &OracleOptions::default()).unwrap();
        assert!(!oracle.budget_exhausted);
        assert_eq!(oracle.solution.powers.len(), 1);
        assert!((oracle.solution.powers[0] - 3.0).abs() < 1e-5);
        let gap = (oracle.solution.mse.total - exact.mse.total) / exact.mse.total;
        assert!(gap.abs() <= 1e-7, "relative gap {gap}");
    }

    #[test]
    fn beta_zero_instance_recovers_full_power() {
        // capabilities [1, 2]: optimum is full power with eta = 25/9
        let profile = build_profile(&[channel(0.5, 4.0), channel(1.0, 4.0)], 1.0).unwrap();
        let stats = GradientStats::new(1.0, 0.0);
        let noise = NoiseSpec::new(1.0, 1).unwrap();
        let oracle = oracle_solve(&profile, &stats, &noise, &OracleOptions::default()).unwrap();
        assert!((oracle.solution.eta - 25.0 / 9.0).abs() < 1e-4);
        for &p in &oracle.solution.powers {
            assert!((p - 4.0).abs() < 1e-4, "power {p} not at peak");
        }
    }

    #[test]
    fn random_instances_match_closed_form() {
        let noise = NoiseSpec::new(1.0, 2).unwrap();
        for seed in 0..10_u64 {
            let k = 2 + (seed % 2) as usize;
            let draws = sample_rayleigh_channels(k, 400 + seed).unwrap();
            let channels: Vec<_> =
                draws.into_iter().map(|d| d.with_peak_power(2.5).unwrap()).collect();
            let alpha = 0.5 + 0.25 * (seed % 3) as f64;
            let beta = [0.1, 1.0, 12.0][(seed % 3) as usize];
            let profile = build_profile(&channels, alpha).unwrap();
            let stats = GradientStats::new(alpha, beta);
            let exact = solve(&profile, &stats, &noise).unwrap();
            let oracle =
                oracle_solve(&profile, &stats, &noise, &OracleOptions::default()).unwrap();
            assert!(!oracle.budget_exhausted, "seed {seed}");
            assert!(
                exact.mse.total <= oracle.solution.mse.total * (1.0 + 1e-6),
                "seed {seed}: closed form {} worse than oracle {}",
                exact.mse.total,
                oracle.solution.mse.total
            );
            let gap = (oracle.solution.mse.total - exact.mse.total) / exact.mse.total;
            assert!(gap.abs() <= 1e-6, "seed {seed}: relative gap {gap}");
        }
    }

    #[test]
    fn tiny_budget_sets_warning() {
        let draws = sample_rayleigh_channels(4, 9).unwrap();
        let channels: Vec<_> =
            draws.into_iter().map(|d| d.with_peak_power(1.0).unwrap()).collect();
        let profile = build_profile(&channels, 1.0).unwrap();
        let stats = GradientStats::new(1.0, 1.0);
        let noise = NoiseSpec::new(1.0, 1).unwrap();
        let oracle =
            oracle_solve(&profile, &stats, &noise, &OracleOptions::with_budget(500)).unwrap();
        assert!(oracle.budget_exhausted);
        assert!(oracle.solution.mse.total.is_finite());
    }
}
