//! Monte-Carlo estimate of the satisfaction probability of a decoupled
//! policy on the finite abstraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::DecoupledPolicy;
use crate::problem::Problem;

const Z95: f64 = 1.959964;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub accepted: bool,
    pub steps_to_accept: Option<usize>,
    pub trace_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub episodes: usize,
    pub accepted: usize,
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub seed: u64,
}

impl MonteCarloEstimate {
    /// Binomial standard error of a probability `p` over this many episodes.
    pub fn standard_error(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.episodes as f64).sqrt()
    }

    /// Whether the frequency is at least `bound - 3 * SE(bound)`.
    pub fn consistent_with_bound(&self, bound: f64) -> bool {
        self.frequency >= bound - 3.0 * self.standard_error(bound) - 1e-12
    }
}

/// Wilson score interval at 95% confidence.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Cumulative transition rows per subsystem and action, for inverse-CDF
/// sampling.
struct Samplers {
    /// `cdf[i][a]` is row-major `n x n`.
    cdf: Vec<Vec<Vec<f64>>>,
    sizes: Vec<usize>,
}

impl Samplers {
    fn new(problem: &Problem) -> Self {
        let cdf = problem
            .system
            .mdps
            .iter()
            .map(|mdp| {
                mdp.transitions()
                    .iter()
                    .map(|t| {
                        let mut out = Vec::with_capacity(t.len());
                        for row in t.rows() {
                            let mut acc = 0.0;
                            out.extend(row.iter().map(|p| {
                                acc += p;
                                acc
                            }));
                        }
                        out
                    })
                    .collect()
            })
            .collect();
        Self {
            cdf,
            sizes: problem.shape(),
        }
    }

    fn sample<R: Rng>(&self, i: usize, a: usize, s: usize, rng: &mut R) -> usize {
        let n = self.sizes[i];
        let row = &self.cdf[i][a][s * n..(s + 1) * n];
        let u: f64 = rng.random::<f64>() * row[n - 1];
        row.partition_point(|&c| c <= u).min(n - 1)
    }
}

/// Runs one episode from `s0`, using the policy step for the remaining time.
fn episode(
    problem: &Problem,
    samplers: &Samplers,
    policy: &DecoupledPolicy,
    s0: &[usize],
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult> {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |x: usize| {
        hash ^= x as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    };
    let acc = problem.accepting();
    let Some(mut q) = problem.initial_mode(s0) else {
        return Ok(EpisodeResult {
            accepted: false,
            steps_to_accept: None,
            trace_hash: hash,
        });
    };
    let mut s = s0.to_vec();
    for t in 0..=horizon {
        mix(q);
        if q == acc {
            return Ok(EpisodeResult {
                accepted: true,
                steps_to_accept: Some(t),
                trace_hash: hash,
            });
        }
        if t == horizon || !problem.is_live(q) {
            break;
        }
        let step = policy.step_at(t, horizon)?;
        for i in 0..s.len() {
            let a = *step
                .slices
                .get(q)
                .and_then(|per| per.get(i))
                .and_then(|slice| slice.get(s[i]))
                .ok_or(Error::MissingPolicy { mode: q, step: t })?;
            s[i] = samplers.sample(i, a, s[i], rng);
            mix(s[i]);
        }
        match problem.successor(q, &s) {
            Some(next) => q = next,
            None => break,
        }
    }
    Ok(EpisodeResult {
        accepted: false,
        steps_to_accept: None,
        trace_hash: hash,
    })
}

/// Simulates `episodes` independent runs of length at most `horizon` from
/// `s0`. Episode `e` draws from a generator seeded with `seed` on stream `e`,
/// so the result does not depend on scheduling.
pub fn simulate(
    problem: &Problem,
    policy: &DecoupledPolicy,
    s0: &[usize],
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if s0.len() != problem.n_subsystems() {
        return Err(Error::DimensionMismatch {
            expected: problem.n_subsystems(),
            got: s0.len(),
        });
    }
    let samplers = Samplers::new(problem);
    let accepted = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            episode(problem, &samplers, policy, s0, horizon, &mut rng).map(|r| usize::from(r.accepted))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let (wilson_low, wilson_high) = wilson_interval(accepted, episodes);
    Ok(MonteCarloEstimate {
        episodes,
        accepted,
        frequency: if episodes == 0 { 0.0 } else { accepted as f64 / episodes as f64 },
        wilson_low,
        wilson_high,
        seed,
    })
}

/// Single episode with its trace hash, for inspection and reproducibility
/// checks.
pub fn simulate_episode(
    problem: &Problem,
    policy: &DecoupledPolicy,
    s0: &[usize],
    horizon: usize,
    seed: u64,
    index: u64,
) -> Result<EpisodeResult> {
    let samplers = Samplers::new(problem);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    episode(problem, &samplers, policy, s0, horizon, &mut rng)
}
