//! Derivative-free optimizers and the fitting workflows built on them:
//! particle-swarm search for strategy tuning and a staged genetic-algorithm
//! fit for the capacity-fade model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::aging::{r_squared, AgingDataset};
use crate::config::{AgingParams, GaConfig, HeuristicParams1, HeuristicParams2, PsoConfig};
use crate::error::{Error, Result};

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

// ---------------------------------------------------------------------------
// particle swarm

/// Best point found by a swarm search, with the per-iteration best-cost
/// trace (first entry is the initial population's best).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsoOutcome {
    pub best_x: Vec<f64>,
    pub best_cost: f64,
    /// Global best cost after initialization and after each iteration;
    /// nonincreasing.
    pub history: Vec<f64>,
}

/// Minimize `cost` over a box with a particle swarm.
///
/// `seeds` are positions guaranteed a place in the initial population
/// (clamped to the box); the rest start uniformly at random. Cognitive and
/// social pulls are scaled by fresh uniform draws per dimension per step.
pub fn pso_minimize<F, R>(
    cost: F,
    bounds: &[(f64, f64)],
    seeds: &[Vec<f64>],
    cfg: &PsoConfig,
    rng: &mut R,
) -> PsoOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng + ?Sized,
{
    let dim = bounds.len();
    assert!(dim > 0, "pso needs at least one dimension");
    assert!(bounds.iter().all(|(lo, hi)| hi >= lo), "pso bounds must be ordered");
    assert!(cfg.particles > 0, "pso needs at least one particle");
    assert!(seeds.len() <= cfg.particles && seeds.iter().all(|s| s.len() == dim));

    let mut positions: Vec<Vec<f64>> = Vec::with_capacity(cfg.particles);
    for seed in seeds {
        positions.push(
            seed.iter()
                .zip(bounds)
                .map(|(&x, &(lo, hi))| x.clamp(lo, hi))
                .collect(),
        );
    }
    while positions.len() < cfg.particles {
        positions.push(bounds.iter().map(|&(lo, hi)| uniform_in(rng, lo, hi)).collect());
    }
    let mut velocities = vec![vec![0.0; dim]; cfg.particles];

    let mut pbest_cost: Vec<f64> = positions.par_iter().map(|x| cost(x)).collect();
    let mut pbest = positions.clone();
    let mut gbest_idx = 0;
    for i in 1..cfg.particles {
        if pbest_cost[i] < pbest_cost[gbest_idx] {
            gbest_idx = i;
        }
    }
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_cost = pbest_cost[gbest_idx];
    let mut history = Vec::with_capacity(cfg.generations + 1);
    history.push(gbest_cost);

    for _ in 0..cfg.generations {
        for i in 0..cfg.particles {
            for d in 0..dim {
                let c1: f64 = rng.gen();
                let c2: f64 = rng.gen();
                velocities[i][d] = cfg.inertia * velocities[i][d]
                    + cfg.cognitive * c1 * (pbest[i][d] - positions[i][d])
                    + cfg.social * c2 * (gbest[d] - positions[i][d]);
                positions[i][d] =
                    (positions[i][d] + velocities[i][d]).clamp(bounds[d].0, bounds[d].1);
            }
        }
        let costs: Vec<f64> = positions.par_iter().map(|x| cost(x)).collect();
        for i in 0..cfg.particles {
            if costs[i] < pbest_cost[i] {
                pbest_cost[i] = costs[i];
                pbest[i] = positions[i].clone();
                if costs[i] < gbest_cost {
                    gbest_cost = costs[i];
                    gbest = positions[i].clone();
                }
            }
        }
        history.push(gbest_cost);
    }

    PsoOutcome {
        best_x: gbest,
        best_cost: gbest_cost,
        history,
    }
}

// ---------------------------------------------------------------------------
// genetic algorithm

/// Best individual found by a genetic-algorithm search.
#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best_x: Vec<f64>,
    pub best_cost: f64,
    /// Best cost per generation (first entry is the initial population's
    /// best); nonincreasing.
    pub history: Vec<f64>,
}

/// Minimize `cost` over a box with a generational genetic algorithm:
/// tournament selection, uniform crossover, Gaussian mutation whose spread
/// anneals geometrically from a fraction of each span down to a fixed floor,
/// and elitism.
pub fn ga_minimize<F, R>(cost: F, bounds: &[(f64, f64)], cfg: &GaConfig, rng: &mut R) -> GaOutcome
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dim = bounds.len();
    assert!(dim > 0, "ga needs at least one dimension");
    assert!(bounds.iter().all(|(lo, hi)| hi > lo), "ga bounds must be nonempty");
    assert!(cfg.population >= 2 && cfg.tournament >= 1 && cfg.elitism < cfg.population);

    let mut population: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| bounds.iter().map(|&(lo, hi)| uniform_in(rng, lo, hi)).collect())
        .collect();
    let mut costs: Vec<f64> = population.iter().map(|x| cost(x)).collect();

    let sigma_start: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| cfg.mutation_sigma_initial * (hi - lo))
        .collect();
    let sigma_end = cfg.mutation_sigma_final.max(1e-300);
    let anneal_steps = cfg.generations.saturating_sub(1).max(1) as f64;

    let mut order: Vec<usize> = (0..cfg.population).collect();
    let mut history = Vec::with_capacity(cfg.generations + 1);
    order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
    history.push(costs[order[0]]);

    for gen in 0..cfg.generations {
        let sigmas: Vec<f64> = sigma_start
            .iter()
            .map(|&s0| s0 * (sigma_end / s0).powf(gen as f64 / anneal_steps))
            .collect();

        let mut next: Vec<Vec<f64>> = Vec::with_capacity(cfg.population);
        for &idx in order.iter().take(cfg.elitism) {
            next.push(population[idx].clone());
        }
        while next.len() < cfg.population {
            let pa = tournament(&costs, cfg.tournament, rng);
            let pb = tournament(&costs, cfg.tournament, rng);
            let mut child = if rng.gen::<f64>() < cfg.crossover_prob {
                (0..dim)
                    .map(|d| {
                        if rng.gen::<bool>() {
                            population[pa][d]
                        } else {
                            population[pb][d]
                        }
                    })
                    .collect::<Vec<f64>>()
            } else {
                population[pa].clone()
            };
            for d in 0..dim {
                if rng.gen::<f64>() < cfg.mutation_prob {
                    let normal = Normal::new(0.0, sigmas[d]).expect("positive mutation spread");
                    child[d] = (child[d] + normal.sample(rng)).clamp(bounds[d].0, bounds[d].1);
                }
            }
            next.push(child);
        }
        population = next;
        costs = population.iter().map(|x| cost(x)).collect();
        order.sort_by(|&a, &b| costs[a].total_cmp(&costs[b]));
        history.push(costs[order[0]]);
    }

    let best = order[0];
    GaOutcome {
        best_x: population[best].clone(),
        best_cost: costs[best],
        history,
    }
}

fn tournament<R: Rng + ?Sized>(costs: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.gen_range(0..costs.len());
    for _ in 1..size {
        let contender = rng.gen_range(0..costs.len());
        if costs[contender] < costs[best] {
            best = contender;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// heuristic tuning

/// Which proportional split rule a parameter vector encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeuristicKind {
    /// Eight polynomial coefficients, discharge branch then charge branch.
    Bilinear,
    /// Engagement thresholds and fixed ratios.
    FixedRatio,
}

impl HeuristicKind {
    /// Search box per parameter.
    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            HeuristicKind::Bilinear => vec![(-10.0, 10.0); 8],
            HeuristicKind::FixedRatio => {
                vec![(0.0, 40e3), (-20e3, 0.0), (0.0, 1.0), (0.0, 1.0)]
            }
        }
    }

    /// A vector under which the rule never engages the bank, so its cost
    /// equals the battery-only cost.
    pub fn passive_seed(self) -> Vec<f64> {
        match self {
            HeuristicKind::Bilinear => vec![0.0; 8],
            HeuristicKind::FixedRatio => vec![40e3, -20e3, 0.0, 0.0],
        }
    }
}

/// Decode a bilinear-rule search vector, keeping the reference power.
pub fn decode_bilinear(x: &[f64], p_ref_w: f64) -> HeuristicParams1 {
    assert_eq!(x.len(), 8);
    HeuristicParams1 {
        discharge: [x[0], x[1], x[2], x[3]],
        charge: [x[4], x[5], x[6], x[7]],
        p_ref_w,
    }
}

/// Decode a fixed-ratio-rule search vector.
pub fn decode_fixed_ratio(x: &[f64]) -> HeuristicParams2 {
    assert_eq!(x.len(), 4);
    HeuristicParams2 {
        engage_discharge_w: x[0],
        engage_charge_w: x[1],
        discharge_ratio: x[2],
        charge_ratio: x[3],
    }
}

/// Tune a split rule by swarm search over its parameter box.
///
/// The passive seed joins the initial swarm, so the tuned cost can never
/// exceed the battery-only cost the seed realizes.
pub fn tune_heuristic<F, R>(
    kind: HeuristicKind,
    cost: F,
    cfg: &PsoConfig,
    rng: &mut R,
) -> PsoOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng + ?Sized,
{
    let bounds = kind.bounds();
    let seeds = vec![kind.passive_seed()];
    pso_minimize(cost, &bounds, &seeds, cfg, rng)
}

// ---------------------------------------------------------------------------
// capacity-fade identification

/// Per-dataset outcome of the fade-model fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetFit {
    pub name: String,
    /// Severity factor refit at the shared exponent.
    pub sigma: f64,
    /// Exponent from the per-dataset stage.
    pub z: f64,
    /// Quality of `sigma * ah^z_mean` against the observations.
    pub r_squared: f64,
}

/// Result of the staged capacity-fade identification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifyResult {
    pub fits: Vec<DatasetFit>,
    pub z_mean: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    /// Pooled quality of the full severity model across every sample.
    pub r_squared: f64,
}

/// Least-squares severity at a fixed exponent: with `x = ah^z` the model is
/// linear in sigma, so the optimum is `sum(q x) / sum(x^2)`.
pub fn conditional_sigma(samples: &[(f64, f64)], z: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(ah, q) in samples {
        let x = ah.powf(z);
        num += q * x;
        den += x * x;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn power_law_sse(samples: &[(f64, f64)], sigma: f64, z: f64) -> f64 {
    samples
        .iter()
        .map(|&(ah, q)| {
            let e = q - sigma * ah.powf(z);
            e * e
        })
        .sum()
}

/// Identify the capacity-fade model from cycling datasets in three stages:
/// a per-dataset power-law fit of (severity, exponent), a closed-form
/// severity refit at the mean exponent, and a fit of the severity surface
/// coefficients on the refit severities. Activation energy, gas constant,
/// and exponent are taken as shared physical structure; `base` supplies the
/// two constants.
pub fn identify_aging<R: Rng + ?Sized>(
    datasets: &[AgingDataset],
    base: &AgingParams,
    cfg: &GaConfig,
    rng: &mut R,
) -> Result<IdentifyResult> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("identification needs at least one dataset".into()));
    }
    for d in datasets {
        if d.samples.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "dataset `{}` has fewer than three samples",
                d.name
            )));
        }
    }

    // stage 1: per-dataset power law, searched in (ln sigma, z)
    let stage1_bounds = [(-12.0, 2.0), (0.05, 1.5)];
    let mut z_values = Vec::with_capacity(datasets.len());
    for d in datasets {
        let fit = ga_minimize(
            |x| power_law_sse(&d.samples, x[0].exp(), x[1]),
            &stage1_bounds,
            cfg,
            rng,
        );
        z_values.push(fit.best_x[1]);
    }
    let z_mean = z_values.iter().sum::<f64>() / z_values.len() as f64;

    // stage 2: severity per dataset, closed form at the shared exponent
    let mut fits = Vec::with_capacity(datasets.len());
    for (d, &z) in datasets.iter().zip(&z_values) {
        let sigma = conditional_sigma(&d.samples, z_mean);
        let observed: Vec<f64> = d.samples.iter().map(|&(_, q)| q).collect();
        let predicted: Vec<f64> = d
            .samples
            .iter()
            .map(|&(ah, _)| sigma * ah.powf(z_mean))
            .collect();
        fits.push(DatasetFit {
            name: d.name.clone(),
            sigma,
            z,
            r_squared: r_squared(&observed, &predicted)?,
        });
    }

    // stage 3: severity-surface coefficients on the log of the refit
    // severities
    let ea = base.activation_energy_j_per_mol;
    let rg = base.gas_constant_j_per_mol_k;
    let targets: Vec<(f64, f64, f64, f64)> = datasets
        .iter()
        .zip(&fits)
        .map(|(d, f)| (d.soc_pct, d.c_rate, d.temp_c + 273.15, f.sigma.ln()))
        .collect();
    let surface_cost = |x: &[f64]| {
        let (alpha, beta, delta) = (x[0], x[1], x[2]);
        targets
            .iter()
            .map(|&(soc, ic, t_k, ln_sigma)| {
                let pre = alpha * soc + beta;
                if pre <= 0.0 {
                    return 1e12;
                }
                let model = pre.ln() + (-ea + delta * ic) / (rg * t_k);
                let e = ln_sigma - model;
                e * e
            })
            .sum::<f64>()
    };
    let stage3_bounds = [(0.0, 10.0), (100.0, 20e3), (0.0, 300.0)];
    let surface = ga_minimize(surface_cost, &stage3_bounds, cfg, rng);
    let (alpha, beta, delta) = (surface.best_x[0], surface.best_x[1], surface.best_x[2]);

    // pooled fit quality of the surface-reconstructed severities
    let fitted = AgingParams {
        alpha,
        beta,
        delta,
        z: z_mean,
        ..*base
    };
    let mut observed = Vec::new();
    let mut predicted = Vec::new();
    for d in datasets {
        let sigma = d.severity_under(&fitted)?;
        for &(ah, q) in &d.samples {
            observed.push(q);
            predicted.push(sigma * ah.powf(z_mean));
        }
    }
    let pooled = r_squared(&observed, &predicted)?;

    Ok(IdentifyResult {
        fits,
        z_mean,
        alpha,
        beta,
        delta,
        r_squared: pooled,
    })
}
