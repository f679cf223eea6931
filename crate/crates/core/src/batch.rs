//! Many independent runs, optionally on a thread pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::mix64;
use crate::engine::{run, Scenario, Trace};
use crate::error::{Error, Result};
use crate::verifier::{find_t_synch, run_checks, Check, CheckOptions, Status, Verdict};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub master_seed: u64,
    pub graph_seed: u64,
    pub s_max: u64,
    pub detection_rounds: Vec<Option<u64>>,
    pub common_detection: Option<u64>,
    pub t_synch: Option<u64>,
    pub simultaneous: bool,
    pub max_msg_bytes: usize,
    pub verdicts: Vec<Verdict>,
}

impl RunSummary {
    pub fn from_trace(trace: &Trace, checks: &[Check], opts: &CheckOptions) -> Self {
        let rounds = trace.detection_rounds();
        let simultaneous = rounds.iter().all(|r| *r == rounds[0]);
        Self {
            master_seed: trace.scenario.master_seed,
            graph_seed: trace.scenario.graph.seed,
            s_max: trace.s_max(),
            common_detection: if simultaneous { rounds[0] } else { None },
            detection_rounds: rounds,
            t_synch: find_t_synch(trace),
            simultaneous,
            max_msg_bytes: trace.max_msg_bytes(),
            verdicts: run_checks(trace, checks, opts),
        }
    }

    /// A run fails when any requested check does not hold.
    pub fn failed(&self) -> bool {
        self.verdicts.iter().any(|v| v.status != Status::Holds)
    }
}

pub fn run_and_summarize(scenario: &Scenario, checks: &[Check], opts: &CheckOptions) -> Result<RunSummary> {
    Ok(RunSummary::from_trace(&run(scenario)?, checks, opts))
}

/// Seed of the `index`-th run derived from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_add(0x5eed)))
}

/// `count` copies of `template` with derived protocol seeds. The graph
/// sequence and start schedule stay fixed, so runs differ only in the nodes'
/// random choices.
pub fn seeded_scenarios(template: &Scenario, count: u64) -> Vec<Scenario> {
    (0..count)
        .map(|i| {
            let mut s = template.clone();
            s.master_seed = derive_seed(template.master_seed, i);
            s
        })
        .collect()
}

/// Runs every scenario. Results keep the input order; `threads == 0` uses
/// rayon's default pool size and `threads == 1` runs inline.
pub fn batch(
    scenarios: &[Scenario],
    checks: &[Check],
    opts: &CheckOptions,
    threads: usize,
) -> Result<Vec<Result<RunSummary>>> {
    let one = |s: &Scenario| run_and_summarize(s, checks, opts);
    if threads == 1 {
        return Ok(scenarios.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| scenarios.par_iter().map(one).collect()))
}

/// Fraction of runs that errored or failed a check.
pub fn failure_fraction(results: &[Result<RunSummary>]) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let failed = results
        .iter()
        .filter(|r| r.as_ref().map_or(true, RunSummary::failed))
        .count();
    failed as f64 / results.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::AdversaryKind;
    use crate::engine::GraphSpec;
    use crate::graph::node_range;
    use crate::protocol::ProtocolParams;

    fn template() -> Scenario {
        let ids = node_range(5);
        Scenario {
            starts: ids.iter().copied().zip([1, 3, 2, 5, 4]).collect(),
            node_ids: ids,
            graph: GraphSpec {
                kind: AdversaryKind::TCompleteRandom {
                    window: 2,
                    density: 0.2,
                },
                seed: 11,
            },
            params: ProtocolParams::Complete { window: 2 },
            horizon: 20,
            master_seed: 7,
            terminate_on_detect: false,
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let scenarios = seeded_scenarios(&template(), 12);
        let checks = [Check::Detection, Check::Simultaneity, Check::CompleteExact];
        let opts = CheckOptions::default();
        let seq = batch(&scenarios, &checks, &opts, 1).unwrap();
        let par = batch(&scenarios, &checks, &opts, 4).unwrap();
        assert_eq!(seq, par);
        assert_eq!(failure_fraction(&seq), 0.0);
        let seeds: std::collections::BTreeSet<u64> = scenarios.iter().map(|s| s.master_seed).collect();
        assert_eq!(seeds.len(), 12);
    }

    #[test]
    fn errors_count_as_failures() {
        let mut bad = template();
        bad.horizon = 1;
        let results = batch(&[template(), bad], &[], &CheckOptions::default(), 1).unwrap();
        assert!(results[1].is_err());
        assert_eq!(failure_fraction(&results), 0.5);
    }
}
