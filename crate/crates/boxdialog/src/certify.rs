//! Certification sweeps for the threshold planner: exhaustive-oracle
//! equivalence over probability grids and random vectors, plus the
//! adjacent-swap property of the expected-duration formula.
//!
//! The sweep is parameterized by the planner under test so that a broken
//! planner (wrong threshold direction, wrong ordering) is caught with a
//! concrete counterexample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotator::ActionTimings;
use crate::cost::{exhaustive_optimal_plan, expected_duration, AcceptanceEstimate, Plan};
use crate::error::Result;

/// Sweep parameters. Defaults: the probability grid
/// `{0.01, 0.1, ..., 0.9, 0.99}` exhaustively for up to 5 proposals, 1000
/// random vectors per length up to 6, both canonical timing pairs, absolute
/// tolerance 1e-12, and 10k swap cases.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid_values: Vec<f64>,
    pub grid_max_n: usize,
    pub random_per_n: usize,
    pub random_max_n: usize,
    pub timing_pairs: Vec<ActionTimings>,
    pub tolerance: f64,
    pub swap_cases: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let mut grid_values = vec![0.01];
        for i in 1..=9 {
            grid_values.push(i as f64 / 10.0);
        }
        grid_values.push(0.99);
        Self {
            grid_values,
            grid_max_n: 5,
            random_per_n: 1000,
            random_max_n: 6,
            timing_pairs: vec![
                ActionTimings::classic_drawing(),
                ActionTimings::extreme_clicking(),
            ],
            tolerance: 1e-12,
            swap_cases: 10_000,
            seed: 2024,
        }
    }
}

/// A case where the planner's expected duration differed from the oracle's.
#[derive(Debug, Clone)]
pub struct PlannerMismatch {
    pub probs: Vec<f64>,
    pub timings: ActionTimings,
    pub planner_duration_s: f64,
    pub oracle_duration_s: f64,
}

/// A case where swapping an out-of-order adjacent pair failed to improve the
/// expected duration as required.
#[derive(Debug, Clone)]
pub struct SwapViolation {
    pub probs: Vec<f64>,
    pub pair_index: usize,
    pub before_s: f64,
    pub after_s: f64,
}

const MAX_RECORDED: usize = 8;

#[derive(Debug, Clone, Default)]
pub struct CertificationReport {
    pub equivalence_cases: usize,
    pub mismatches: Vec<PlannerMismatch>,
    pub swap_cases: usize,
    pub swap_violations: Vec<SwapViolation>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.swap_violations.is_empty()
    }

    /// Short human-readable pass/fail summary, one line per sweep.
    pub fn summary(&self) -> String {
        let mut lines = vec![
            format!(
                "oracle equivalence: {} cases, {} mismatches -> {}",
                self.equivalence_cases,
                self.mismatches.len(),
                if self.mismatches.is_empty() { "PASS" } else { "FAIL" }
            ),
            format!(
                "adjacent swap: {} cases, {} violations -> {}",
                self.swap_cases,
                self.swap_violations.len(),
                if self.swap_violations.is_empty() { "PASS" } else { "FAIL" }
            ),
        ];
        if let Some(m) = self.mismatches.first() {
            lines.push(format!(
                "counterexample: probs {:?} timings ({}, {}) planner {:.15} oracle {:.15}",
                m.probs,
                m.timings.verify_s,
                m.timings.draw_s,
                m.planner_duration_s,
                m.oracle_duration_s
            ));
        }
        if let Some(v) = self.swap_violations.first() {
            lines.push(format!(
                "counterexample: sequence {:?} swap at {} before {:.15} after {:.15}",
                v.probs, v.pair_index, v.before_s, v.after_s
            ));
        }
        lines.join("\n")
    }
}

fn decode_grid_vector(mut index: usize, n: usize, grid: &[f64]) -> Vec<f64> {
    let mut probs = Vec::with_capacity(n);
    for _ in 0..n {
        probs.push(grid[index % grid.len()]);
        index /= grid.len();
    }
    probs
}

fn check_case<F>(
    probs: &[f64],
    timing_pairs: &[ActionTimings],
    tolerance: f64,
    planner: &F,
) -> Vec<PlannerMismatch>
where
    F: Fn(&AcceptanceEstimate, &ActionTimings) -> Plan,
{
    let estimate = AcceptanceEstimate::new(probs.to_vec()).expect("valid probabilities");
    let mut mismatches = Vec::new();
    for timings in timing_pairs {
        let planned = planner(&estimate, timings);
        let oracle = exhaustive_optimal_plan(probs, timings).expect("within oracle capacity");
        if (planned.expected_duration_s - oracle.expected_duration_s).abs() > tolerance {
            mismatches.push(PlannerMismatch {
                probs: probs.to_vec(),
                timings: *timings,
                planner_duration_s: planned.expected_duration_s,
                oracle_duration_s: oracle.expected_duration_s,
            });
        }
    }
    mismatches
}

/// Runs the oracle-equivalence sweep and the adjacent-swap sweep against the
/// given planner.
pub fn certify_planner<F>(config: &SweepConfig, planner: F) -> Result<CertificationReport>
where
    F: Fn(&AcceptanceEstimate, &ActionTimings) -> Plan + Sync,
{
    let mut report = CertificationReport::default();

    // Exhaustive grid, lengths 0..=grid_max_n, smallest lengths first so the
    // first recorded counterexample is minimal in n.
    for n in 0..=config.grid_max_n {
        let total = config.grid_values.len().pow(n as u32);
        report.equivalence_cases += total * config.timing_pairs.len();
        let mut found: Vec<PlannerMismatch> = (0..total)
            .into_par_iter()
            .flat_map_iter(|index| {
                let probs = decode_grid_vector(index, n, &config.grid_values);
                check_case(&probs, &config.timing_pairs, config.tolerance, &planner)
            })
            .collect();
        report.mismatches.append(&mut found);
        if report.mismatches.len() >= MAX_RECORDED {
            report.mismatches.truncate(MAX_RECORDED);
            return Ok(report);
        }
    }

    // Random vectors per length.
    for n in 1..=config.random_max_n {
        report.equivalence_cases += config.random_per_n * config.timing_pairs.len();
        let mut found: Vec<PlannerMismatch> = (0..config.random_per_n)
            .into_par_iter()
            .flat_map_iter(|case| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((n * 1_000_003 + case) as u64);
                let probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
                check_case(&probs, &config.timing_pairs, config.tolerance, &planner)
            })
            .collect();
        report.mismatches.append(&mut found);
        if report.mismatches.len() >= MAX_RECORDED {
            report.mismatches.truncate(MAX_RECORDED);
            return Ok(report);
        }
    }

    let swaps = swap_lemma_sweep(config.swap_cases, config.seed ^ 0x5357_4150);
    report.swap_cases = config.swap_cases;
    report.swap_violations = swaps;
    Ok(report)
}

/// Checks that swapping the out-of-order adjacent pair of a sorted-violating
/// sequence never increases the expected duration, and strictly decreases it
/// whenever the two probabilities differ and the preceding rejection product
/// exceeds 1e-9.
///
/// Probabilities are drawn on a millesimal grid so "differ" means by at least
/// 1e-3, keeping the strictness check clear of rounding noise.
pub fn swap_lemma_sweep(cases: usize, seed: u64) -> Vec<SwapViolation> {
    let timing_pairs = [
        ActionTimings::classic_drawing(),
        ActionTimings::extreme_clicking(),
    ];
    (0..cases)
        .into_par_iter()
        .flat_map_iter(|case| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(case as u64);
            let n = rng.random_range(2..=8);
            let mut probs: Vec<f64> = (0..n)
                .map(|_| (rng.random::<f64>() * 999.0).round() / 1000.0)
                .collect();
            // Descending is the optimal order; force one adjacent violation.
            probs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let pair_index = rng.random_range(0..n - 1);
            probs.swap(pair_index, pair_index + 1);

            let timings = timing_pairs[case % timing_pairs.len()];
            let before = expected_duration(&probs, &timings).expect("valid probabilities");
            let mut swapped = probs.clone();
            swapped.swap(pair_index, pair_index + 1);
            let after = expected_duration(&swapped, &timings).expect("valid probabilities");

            let reject_prefix: f64 = probs[..pair_index].iter().map(|p| 1.0 - p).product();
            let differ = probs[pair_index] != probs[pair_index + 1];
            let out_of_order = probs[pair_index] < probs[pair_index + 1];

            let increases = after > before;
            let must_strictly_decrease =
                out_of_order && differ && reject_prefix > 1e-9 && after >= before;
            if increases || must_strictly_decrease {
                vec![SwapViolation {
                    probs,
                    pair_index,
                    before_s: before,
                    after_s: after,
                }]
            } else {
                Vec::new()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{threshold_plan, PlanOrdering};

    fn small_config() -> SweepConfig {
        SweepConfig {
            grid_values: vec![0.05, 0.3, 0.7, 0.95],
            grid_max_n: 3,
            random_per_n: 50,
            random_max_n: 4,
            swap_cases: 500,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn correct_planner_passes() {
        let report = certify_planner(&small_config(), |estimate, timings| {
            threshold_plan(estimate, timings, PlanOrdering::SortedByProb)
        })
        .unwrap();
        assert!(report.passed(), "{}", report.summary());
        assert!(report.equivalence_cases > 0);
    }

    #[test]
    fn inverted_threshold_planner_is_caught() {
        // Mutant: verifies the boxes the rule says to skip.
        let report = certify_planner(&small_config(), |estimate, timings| {
            let threshold = timings.verify_draw_ratio();
            let mut order: Vec<usize> = (0..estimate.len())
                .filter(|&i| estimate.probs()[i] <= threshold)
                .collect();
            order.sort_by(|&a, &b| {
                estimate.probs()[b].partial_cmp(&estimate.probs()[a]).unwrap()
            });
            let probs: Vec<f64> = order.iter().map(|&i| estimate.probs()[i]).collect();
            Plan {
                expected_duration_s: expected_duration(&probs, timings).unwrap(),
                box_order: order,
            }
        })
        .unwrap();
        assert!(!report.passed());
        assert!(!report.mismatches.is_empty());
        assert!(report.summary().contains("counterexample"));
    }

    #[test]
    fn zero_length_grid_trivially_passes() {
        let config = SweepConfig {
            grid_max_n: 0,
            random_per_n: 0,
            random_max_n: 0,
            swap_cases: 0,
            ..SweepConfig::default()
        };
        let report = certify_planner(&config, |estimate, timings| {
            threshold_plan(estimate, timings, PlanOrdering::SortedByProb)
        })
        .unwrap();
        assert!(report.passed());
        // Length zero still prices the pure-drawing dialog for both timings.
        assert_eq!(report.equivalence_cases, 2);
    }

    #[test]
    fn swap_sweep_is_clean() {
        assert!(swap_lemma_sweep(2000, 99).is_empty());
    }
}
