//! Numerical checks of the drift-forgetting theory in an isotropic Gaussian world:
//! one class whose prototype drifts among fixed competitors, classified by the
//! nearest-prototype rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::linalg::{dist, norm, RealVector};
use crate::numkit::rng::Rng;
use crate::protobank::{geometry, TrajectoryGeometry};

/// Slack tolerance for the deterministic inequalities.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianWorld {
    pub sigma: f64,
    pub competitors: Vec<RealVector>,
    /// Drifting prototype at steps `0..=T`.
    pub trajectory: Vec<RealVector>,
}

impl GaussianWorld {
    /// Rejects worlds where the drifting prototype touches a competitor.
    pub fn new(sigma: f64, competitors: Vec<RealVector>, trajectory: Vec<RealVector>) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
        }
        if competitors.is_empty() || trajectory.is_empty() {
            return Err(Error::Argument("a world needs competitors and at least one step".into()));
        }
        let d = trajectory[0].dim();
        if competitors.iter().chain(&trajectory).any(|p| p.dim() != d) {
            return Err(Error::Shape("world prototypes differ in dimension".into()));
        }
        let w = Self { sigma, competitors, trajectory };
        if w.gamma_min() <= 0.0 {
            return Err(Error::Argument("drifting prototype coincides with a competitor".into()));
        }
        Ok(w)
    }

    pub fn dim(&self) -> usize {
        self.trajectory[0].dim()
    }

    pub fn num_classes(&self) -> usize {
        self.competitors.len() + 1
    }

    /// Horizon `T`; steps run `0..=T`.
    pub fn horizon(&self) -> usize {
        self.trajectory.len() - 1
    }

    pub fn gamma_min(&self) -> f64 {
        (0..self.trajectory.len()).map(|t| margin(self, t)).fold(f64::INFINITY, f64::min)
    }

    pub fn geometry(&self) -> TrajectoryGeometry {
        geometry(&self.trajectory)
    }
}

/// Distance from the drifting prototype at step `t` to its nearest competitor.
pub fn margin(world: &GaussianWorld, t: usize) -> f64 {
    world
        .competitors
        .iter()
        .map(|c| dist(&world.trajectory[t], c))
        .fold(f64::INFINITY, f64::min)
}

/// `(K − 1) · exp(−γ² / 8σ²)`.
pub fn g_margin_bound(gamma: f64, classes: usize, sigma: f64) -> f64 {
    (classes as f64 - 1.0) * (-gamma * gamma / (8.0 * sigma * sigma)).exp()
}

/// Lipschitz constant of [`g_margin_bound`] on `[gamma_min, ∞)`.
pub fn lipschitz_lg(gamma_min: f64, classes: usize, sigma: f64) -> f64 {
    let k1 = classes as f64 - 1.0;
    if gamma_min <= 2.0 * sigma {
        k1 * (-0.5f64).exp() / (2.0 * sigma)
    } else {
        k1 * gamma_min / (4.0 * sigma * sigma) * (-gamma_min * gamma_min / (8.0 * sigma * sigma)).exp()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact two-class risk `Φ(−γ / 2σ)`.
pub fn two_class_risk(gamma: f64, sigma: f64) -> f64 {
    normal_cdf(-gamma / (2.0 * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub std_error: f64,
}

/// Standard-normal draws reused across the steps of one world.
pub fn noise_pool(dim: usize, n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n * dim).map(|_| rng.normal()).collect()
}

/// Misclassification rate of `N(μ_t, σ²I)` under the nearest-prototype rule,
/// using the given standard-normal pool of `n × d` values.
pub fn mc_risk_with_noise(world: &GaussianWorld, t: usize, noise: &[f64]) -> Result<RiskEstimate> {
    let d = world.dim();
    if noise.is_empty() || !noise.len().is_multiple_of(d) {
        return Err(Error::Shape("noise pool does not match world dimension".into()));
    }
    let n = noise.len() / d;
    let mu = &world.trajectory[t];
    let errors: usize = noise
        .par_chunks(d * 1024)
        .map(|block| {
            let mut z = vec![0.0; d];
            let mut wrong = 0usize;
            for eps in block.chunks(d) {
                for j in 0..d {
                    z[j] = mu[j] + world.sigma * eps[j];
                }
                let own: f64 = (0..d).map(|j| (z[j] - mu[j]).powi(2)).sum();
                if world.competitors.iter().any(|c| (0..d).map(|j| (z[j] - c[j]).powi(2)).sum::<f64>() < own) {
                    wrong += 1;
                }
            }
            wrong
        })
        .sum();
    let p = errors as f64 / n as f64;
    Ok(RiskEstimate {
        risk: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
    })
}

pub fn mc_risk(world: &GaussianWorld, t: usize, n: usize, rng: &mut Rng) -> Result<RiskEstimate> {
    if n < 1000 {
        return Err(Error::Argument(format!("Monte Carlo risk needs n >= 1000, got {n}")));
    }
    mc_risk_with_noise(world, t, &noise_pool(world.dim(), n, rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub min_slack: f64,
    pub pass: bool,
}

impl SlackReport {
    fn from_slack(min_slack: f64) -> Self {
        Self { min_slack, pass: min_slack >= -SLACK_TOL }
    }
}

/// `|γ_t − γ_s| ≤ S(s, t)` over all pairs `s < t`.
pub fn check_margin_path(world: &GaussianWorld) -> SlackReport {
    let gammas: Vec<f64> = (0..world.trajectory.len()).map(|t| margin(world, t)).collect();
    let steps: Vec<f64> = world.trajectory.windows(2).map(|w| dist(&w[1], &w[0])).collect();
    let mut min_slack = f64::INFINITY;
    for s in 0..gammas.len() {
        let mut path = 0.0;
        for t in (s + 1)..gammas.len() {
            path += steps[t - 1];
            min_slack = min_slack.min(path - (gammas[t] - gammas[s]).abs());
        }
    }
    SlackReport::from_slack(if min_slack.is_finite() { min_slack } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathCurvatureReport {
    /// `T(T+1)/2 · 𝒦 − Σ‖v‖²`
    pub energy_slack: f64,
    /// `T·sqrt((T+1)/2)·sqrt(𝒦) − S`
    pub length_slack: f64,
    pub pass: bool,
}

pub fn path_length_bound(horizon: usize, curvature_energy: f64) -> f64 {
    let t = horizon as f64;
    t * ((t + 1.0) / 2.0).sqrt() * curvature_energy.max(0.0).sqrt()
}

pub fn check_path_curvature(geom: &TrajectoryGeometry) -> PathCurvatureReport {
    let t = geom.horizon() as f64;
    let energy = geom.curvature_energy.unwrap_or(0.0);
    let energy_slack = t * (t + 1.0) / 2.0 * energy - geom.sum_sq_velocity();
    let length_slack = path_length_bound(geom.horizon(), energy) - geom.path_length;
    // relative tolerance: both sides grow with the trajectory scale
    let tol = SLACK_TOL * (1.0 + geom.sum_sq_velocity() + geom.path_length);
    PathCurvatureReport {
        energy_slack,
        length_slack,
        pass: energy_slack >= -tol && length_slack >= -tol,
    }
}

/// Lipschitz check of the margin bound on a `points`-point grid over `[gamma_min, gamma_min + 10σ]`.
pub fn check_g_lipschitz(gamma_min: f64, classes: usize, sigma: f64, points: usize) -> SlackReport {
    let lg = lipschitz_lg(gamma_min, classes, sigma);
    let grid: Vec<f64> = (0..points)
        .map(|i| gamma_min + 10.0 * sigma * i as f64 / (points.max(2) - 1) as f64)
        .collect();
    let gs: Vec<f64> = grid.iter().map(|&g| g_margin_bound(g, classes, sigma)).collect();
    let mut min_slack = f64::INFINITY;
    for i in 0..grid.len() {
        for j in (i + 1)..grid.len() {
            min_slack = min_slack.min(lg * (grid[j] - grid[i]) - (gs[j] - gs[i]).abs());
        }
    }
    SlackReport::from_slack(if min_slack.is_finite() { min_slack } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub world: usize,
    pub classes: usize,
    pub dim: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub gamma_min: f64,
    pub margins: Vec<f64>,
    pub risks: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub margin_bounds: Vec<f64>,
    pub margin_bound_ok: bool,
    pub lipschitz: f64,
    pub path_length: f64,
    pub curvature_energy: f64,
    /// Final minus best risk.
    pub forgetting: f64,
    pub forgetting_se: f64,
    pub forgetting_bound: f64,
    pub forgetting_ok: bool,
    pub regret: f64,
    pub regret_se: f64,
    pub regret_bound: f64,
    pub regret_ok: bool,
    /// Largest per-step excess over the best risk.
    pub max_excess: f64,
    /// `regret ≤ (T+1) · max_excess`
    pub regret_relation_ok: bool,
    /// Closed-form risks, two-class worlds only.
    pub exact_risks: Option<Vec<f64>>,
    pub exact_ok: Option<bool>,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.margin_bound_ok
            && self.forgetting_ok
            && self.regret_ok
            && self.regret_relation_ok
            && self.exact_ok.unwrap_or(true)
    }
}

/// Estimates every step's risk with one shared noise pool and checks the margin,
/// forgetting and regret bounds with a three-standard-error allowance.
pub fn check_forgetting_bound(world: &GaussianWorld, n_mc: usize, rng: &mut Rng, id: usize) -> Result<BoundReport> {
    if n_mc < 1000 {
        return Err(Error::Argument(format!("Monte Carlo risk needs n >= 1000, got {n_mc}")));
    }
    let k = world.num_classes();
    let horizon = world.horizon();
    let noise = noise_pool(world.dim(), n_mc, rng);
    let est: Vec<RiskEstimate> = (0..=horizon)
        .map(|t| mc_risk_with_noise(world, t, &noise))
        .collect::<Result<_>>()?;
    let risks: Vec<f64> = est.iter().map(|e| e.risk).collect();
    let std_errors: Vec<f64> = est.iter().map(|e| e.std_error).collect();
    let margins: Vec<f64> = (0..=horizon).map(|t| margin(world, t)).collect();
    let margin_bounds: Vec<f64> = margins.iter().map(|&g| g_margin_bound(g, k, world.sigma)).collect();
    let margin_bound_ok = (0..=horizon).all(|t| risks[t] <= margin_bounds[t] + 3.0 * std_errors[t]);

    let gamma_min = world.gamma_min();
    let lipschitz = lipschitz_lg(gamma_min, k, world.sigma);
    let geom = world.geometry();
    let curvature_energy = geom.curvature_energy.unwrap_or(0.0);
    let forgetting_bound = lipschitz * path_length_bound(horizon, curvature_energy);

    let best_step = (0..=horizon)
        .min_by(|&a, &b| risks[a].total_cmp(&risks[b]))
        .unwrap_or(0);
    let best = risks[best_step];
    let forgetting = risks[horizon] - best;
    let forgetting_se = (std_errors[horizon].powi(2) + std_errors[best_step].powi(2)).sqrt();
    let regret: f64 = risks.iter().map(|r| r - best).sum();
    let steps = (horizon + 1) as f64;
    let regret_se = (std_errors.iter().map(|s| s * s).sum::<f64>() + (steps * std_errors[best_step]).powi(2)).sqrt();
    let regret_bound = steps * forgetting_bound;
    let max_excess = risks.iter().map(|r| r - best).fold(0.0, f64::max);

    let (exact_risks, exact_ok) = if k == 2 {
        let exact: Vec<f64> = margins.iter().map(|&g| two_class_risk(g, world.sigma)).collect();
        let ok = (0..=horizon).all(|t| (risks[t] - exact[t]).abs() <= 3.0 * std_errors[t].max(1.0 / n_mc as f64));
        (Some(exact), Some(ok))
    } else {
        (None, None)
    };

    Ok(BoundReport {
        world: id,
        classes: k,
        dim: world.dim(),
        horizon,
        sigma: world.sigma,
        gamma_min,
        margins,
        risks,
        std_errors,
        margin_bounds,
        margin_bound_ok,
        lipschitz,
        path_length: geom.path_length,
        curvature_energy,
        forgetting,
        forgetting_se,
        forgetting_bound,
        forgetting_ok: forgetting <= forgetting_bound + 3.0 * forgetting_se,
        regret,
        regret_se,
        regret_bound,
        regret_ok: regret <= regret_bound + 3.0 * regret_se,
        max_excess,
        regret_relation_ok: regret <= steps * max_excess + 1e-12,
        exact_risks,
        exact_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldGenConfig {
    pub max_classes: usize,
    pub max_dim: usize,
    pub max_horizon: usize,
    /// Every this many worlds drifts straight at its nearest competitor.
    pub adversarial_every: usize,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            max_classes: 5,
            max_dim: 8,
            max_horizon: 8,
            adversarial_every: 4,
        }
    }
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random world with `γ_min ≥ σ`; two-class worlds appear with the same odds as any other size.
pub fn random_world(cfg: &WorldGenConfig, adversarial: bool, rng: &mut Rng) -> GaussianWorld {
    loop {
        let k = 2 + rng.below(cfg.max_classes - 1);
        let d = 2 + rng.below(cfg.max_dim - 1);
        let horizon = 1 + rng.below(cfg.max_horizon);
        let sigma = rng.uniform_range(0.5, 2.0);
        let spread = sigma * rng.uniform_range(3.0, 8.0);
        let competitors: Vec<RealVector> = (0..k - 1)
            .map(|_| (0..d).map(|_| spread * rng.normal()).collect::<Vec<_>>().into())
            .collect();
        let start: Vec<f64> = (0..d).map(|_| spread * rng.normal()).collect();
        let mut trajectory = vec![RealVector::from(start.clone())];
        if adversarial {
            let target = competitors
                .iter()
                .min_by(|a, b| dist(a, &start).total_cmp(&dist(b, &start)))
                .unwrap();
            let gap = dist(target, &start);
            let room = (gap - sigma).max(0.0);
            let step = room / horizon as f64 * rng.uniform();
            let dir: Vec<f64> = target.iter().zip(&start).map(|(a, b)| (a - b) / gap).collect();
            for t in 1..=horizon {
                trajectory.push(start.iter().zip(&dir).map(|(s, u)| s + step * t as f64 * u).collect::<Vec<_>>().into());
            }
        } else {
            let mut velocity: Vec<f64> = random_unit(d, rng).into_iter().map(|v| v * sigma * rng.uniform()).collect();
            let mut pos = start.clone();
            for _ in 1..=horizon {
                let turn = random_unit(d, rng);
                let bend = 0.5 * sigma * rng.uniform();
                for j in 0..d {
                    velocity[j] += bend * turn[j];
                    pos[j] += velocity[j];
                }
                trajectory.push(pos.clone().into());
            }
        }
        if let Ok(w) = GaussianWorld::new(sigma, competitors, trajectory) {
            if w.gamma_min() >= sigma {
                return w;
            }
        }
    }
}

/// Random trajectory with `T ≤ max_horizon`, dimension `≤ max_dim`, plus competitors.
pub fn random_trajectory_world(max_horizon: usize, max_dim: usize, rng: &mut Rng) -> GaussianWorld {
    loop {
        let d = 1 + rng.below(max_dim);
        let horizon = 1 + rng.below(max_horizon);
        let k = 2 + rng.below(4);
        let scale = rng.uniform_range(0.1, 5.0);
        let competitors: Vec<RealVector> = (0..k - 1)
            .map(|_| (0..d).map(|_| 3.0 * rng.normal()).collect::<Vec<_>>().into())
            .collect();
        let trajectory: Vec<RealVector> = (0..=horizon)
            .map(|_| (0..d).map(|_| scale * rng.normal()).collect::<Vec<_>>().into())
            .collect();
        if let Ok(w) = GaussianWorld::new(1.0, competitors, trajectory) {
            return w;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuiteReport {
    pub trajectories: usize,
    pub margin_path_violations: usize,
    pub path_curvature_violations: usize,
    pub lipschitz_violations: usize,
    pub min_margin_path_slack: f64,
    pub min_energy_slack: f64,
    pub min_length_slack: f64,
}

impl LemmaSuiteReport {
    pub fn pass(&self) -> bool {
        self.margin_path_violations == 0 && self.path_curvature_violations == 0 && self.lipschitz_violations == 0
    }
}

/// Deterministic inequalities over random trajectories and a grid of `g` configurations.
pub fn lemma_suite(seed: u64, trajectories: usize, grid_points: usize) -> LemmaSuiteReport {
    let root = Rng::new(seed);
    let checks: Vec<(SlackReport, PathCurvatureReport)> = (0..trajectories)
        .into_par_iter()
        .map(|i| {
            let w = random_trajectory_world(10, 8, &mut root.split(i as u64));
            (check_margin_path(&w), check_path_curvature(&w.geometry()))
        })
        .collect();
    let lipschitz_violations = [(0.5, 2, 1.0), (1.0, 2, 1.0), (2.0, 3, 1.0), (4.0, 2, 1.0), (1.5, 5, 0.7), (3.0, 4, 2.5)]
        .par_iter()
        .filter(|&&(g, k, s)| !check_g_lipschitz(g, k, s, grid_points).pass)
        .count();
    LemmaSuiteReport {
        trajectories,
        margin_path_violations: checks.iter().filter(|c| !c.0.pass).count(),
        path_curvature_violations: checks.iter().filter(|c| !c.1.pass).count(),
        lipschitz_violations,
        min_margin_path_slack: checks.iter().map(|c| c.0.min_slack).fold(f64::INFINITY, f64::min),
        min_energy_slack: checks.iter().map(|c| c.1.energy_slack).fold(f64::INFINITY, f64::min),
        min_length_slack: checks.iter().map(|c| c.1.length_slack).fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSuiteReport {
    pub worlds: usize,
    pub two_class_worlds: usize,
    pub margin_bound_violations: usize,
    pub forgetting_violations: usize,
    pub regret_violations: usize,
    pub regret_relation_violations: usize,
    pub exact_risk_mismatches: usize,
    pub reports: Vec<BoundReport>,
}

impl BoundSuiteReport {
    pub fn pass(&self) -> bool {
        self.margin_bound_violations == 0
            && self.forgetting_violations == 0
            && self.regret_violations == 0
            && self.regret_relation_violations == 0
            && self.exact_risk_mismatches == 0
    }
}

/// Monte Carlo sweep over random worlds.
pub fn bound_suite(seed: u64, worlds: usize, n_mc: usize, cfg: &WorldGenConfig) -> Result<BoundSuiteReport> {
    let root = Rng::new(seed);
    let reports: Vec<BoundReport> = (0..worlds)
        .into_par_iter()
        .map(|i| {
            let mut rng = root.split(i as u64);
            let adversarial = cfg.adversarial_every > 0 && i % cfg.adversarial_every == cfg.adversarial_every - 1;
            let w = random_world(cfg, adversarial, &mut rng);
            check_forgetting_bound(&w, n_mc, &mut rng, i)
        })
        .collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&BoundReport) -> bool| reports.iter().filter(|r| f(r)).count();
    Ok(BoundSuiteReport {
        worlds,
        two_class_worlds: count(&|r| r.classes == 2),
        margin_bound_violations: count(&|r| !r.margin_bound_ok),
        forgetting_violations: count(&|r| !r.forgetting_ok),
        regret_violations: count(&|r| !r.regret_ok),
        regret_relation_violations: count(&|r| !r.regret_relation_ok),
        exact_risk_mismatches: count(&|r| r.exact_ok == Some(false)),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rv(v: &[f64]) -> RealVector {
        v.to_vec().into()
    }

    #[test]
    fn margin_cases() {
        let w = GaussianWorld::new(1.0, vec![rv(&[2.0, 0.0])], vec![rv(&[0.0, 0.0])]).unwrap();
        assert_eq!(margin(&w, 0), 2.0);
        let w = GaussianWorld::new(1.0, vec![rv(&[1.5, 0.0]), rv(&[0.0, 3.0])], vec![rv(&[0.0, 0.0])]).unwrap();
        assert_eq!(margin(&w, 0), 1.5);
        assert!(GaussianWorld::new(1.0, vec![rv(&[1.0, 1.0])], vec![rv(&[0.0, 0.0]), rv(&[1.0, 1.0])]).is_err());
    }

    #[test]
    fn g_and_lipschitz_values() {
        assert_eq!(g_margin_bound(0.0, 4, 1.0), 3.0);
        assert!((g_margin_bound(2.0, 3, 1.0) - 2.0 * (-0.5f64).exp()).abs() < 1e-15);
        assert!((g_margin_bound(2.0, 3, 1.0) - 1.21306).abs() < 1e-5);
        let grid: Vec<f64> = (0..100).map(|i| g_margin_bound(i as f64 * 0.1, 3, 1.0)).collect();
        assert!(grid.windows(2).all(|w| w[1] <= w[0]));

        assert!((lipschitz_lg(1.0, 2, 1.0) - 0.30327).abs() < 1e-5);
        assert!((lipschitz_lg(4.0, 2, 1.0) - (-2.0f64).exp()).abs() < 1e-15);
        let a = lipschitz_lg(2.0, 3, 1.0);
        let b = lipschitz_lg(2.0 + 1e-12, 3, 1.0);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn normal_cdf_accuracy() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-12);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
    }

    #[test]
    fn mc_risk_cases() {
        let w = GaussianWorld::new(1e-9, vec![rv(&[1.0, 0.0])], vec![rv(&[-1.0, 0.0])]).unwrap();
        assert_eq!(mc_risk(&w, 0, 1000, &mut Rng::new(0)).unwrap().risk, 0.0);
        let w = GaussianWorld::new(1.0, vec![rv(&[1.0, 0.0])], vec![rv(&[-1.0, 0.0])]).unwrap();
        let e = mc_risk(&w, 0, 100_000, &mut Rng::new(1)).unwrap();
        let exact = two_class_risk(2.0, 1.0);
        assert!((exact - 0.15866).abs() < 1e-5);
        assert!((e.risk - exact).abs() <= 3.0 * e.std_error, "{e:?}");
        assert!(e.risk <= g_margin_bound(2.0, 2, 1.0) + 3.0 * e.std_error);
        assert!(mc_risk(&w, 0, 10, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn margin_path_cases() {
        let comp = vec![rv(&[5.0, 0.0])];
        let stat = GaussianWorld::new(1.0, comp.clone(), vec![rv(&[0.0, 0.0]); 4]).unwrap();
        assert_eq!(check_margin_path(&stat).min_slack, 0.0);
        let straight: Vec<RealVector> = (0..4).map(|t| rv(&[t as f64, 0.0])).collect();
        let tight = GaussianWorld::new(1.0, comp, straight).unwrap();
        let r = check_margin_path(&tight);
        assert!(r.pass && r.min_slack.abs() < 1e-12);
    }

    #[test]
    fn path_curvature_cases() {
        let g = geometry(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]);
        let r = check_path_curvature(&g);
        assert!((r.energy_slack - 1.0).abs() < 1e-12 && r.pass);
        let g = geometry(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
        let r = check_path_curvature(&g);
        assert!((r.length_slack - (2.0 * 1.5f64.sqrt() * 3f64.sqrt() - 2.0)).abs() < 1e-12);
        let g = geometry(&vec![vec![1.0, 1.0]; 3]);
        let r = check_path_curvature(&g);
        assert_eq!((r.energy_slack, r.length_slack), (0.0, 0.0));
    }

    #[test]
    fn static_world_has_zero_forgetting() {
        let w = GaussianWorld::new(1.0, vec![rv(&[3.0, 0.0]), rv(&[0.0, 3.0])], vec![rv(&[0.0, 0.0]); 5]).unwrap();
        let r = check_forgetting_bound(&w, 20_000, &mut Rng::new(5), 0).unwrap();
        assert_eq!(r.forgetting, 0.0);
        assert_eq!(r.regret, 0.0);
        assert_eq!(r.forgetting_bound, 0.0);
        assert!(r.pass());
    }

    #[test]
    fn small_suites_pass() {
        let l = lemma_suite(3, 200, 200);
        assert!(l.pass(), "{l:?}");
        let b = bound_suite(4, 12, 20_000, &WorldGenConfig::default()).unwrap();
        assert!(b.pass(), "{:?}", b.reports.iter().filter(|r| !r.pass()).collect::<Vec<_>>());
        for r in &b.reports {
            assert!(r.gamma_min >= r.sigma);
        }
    }
}
