use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::io::{encode_checkpoint, Field, RunConfig};
use crate::miner::Strategy;
use crate::models::Generator;
use crate::numcore::par::map_range;

use super::pipeline::{run_strategy, Prepared};

pub const REPORT_HEADER: [&str; 4] = ["strategy", "seed", "target_accuracy", "inputs"];

/// Required median margin of ASM over the anchored baseline.
pub const MARGIN_ANCHORED: f64 = 0.01;
/// Required median margin of ASM over source-only training.
pub const MARGIN_SOURCE_ONLY: f64 = 0.05;

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub median: f64,
}

/// All four strategies over the same seeds, data split and generator.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub results: Vec<StrategyResult>,
    /// SHA-256 over the data split and generator parameters every run used.
    pub inputs: String,
}

impl StrategyReport {
    pub fn run(cfg: &RunConfig, gen: &Generator<f32>, data: &Prepared) -> Result<Self> {
        let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.seed.wrapping_add(k)).collect();
        let jobs: Vec<(Strategy, u64)> = Strategy::ALL
            .iter()
            .flat_map(|&s| seeds.iter().map(move |&k| (s, k)))
            .collect();
        let acc = map_range(jobs.len(), |i| {
            let (s, k) = jobs[i];
            let g = (s != Strategy::SourceOnly).then_some(gen);
            run_strategy(cfg, g, data, s, k).map(|r| r.target_accuracy)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
        let results = Strategy::ALL
            .iter()
            .zip(acc.chunks(seeds.len()))
            .map(|(&strategy, a)| StrategyResult {
                strategy,
                seeds: seeds.clone(),
                accuracy: a.to_vec(),
                median: median(a),
            })
            .collect();

        let mut h = Sha256::new();
        h.update(data.digest().as_bytes());
        for (_, ps) in gen.parts() {
            h.update(encode_checkpoint(ps));
        }
        Ok(StrategyReport {
            results,
            inputs: hex::encode(h.finalize()),
        })
    }

    pub fn median_of(&self, s: Strategy) -> f64 {
        self.results
            .iter()
            .find(|r| r.strategy == s)
            .map_or(f64::NAN, |r| r.median)
    }

    /// Median ASM accuracy beats anchored by `MARGIN_ANCHORED` and
    /// source-only by `MARGIN_SOURCE_ONLY`.
    pub fn passed(&self) -> bool {
        let asm = self.median_of(Strategy::Asm);
        asm >= self.median_of(Strategy::Anchored) + MARGIN_ANCHORED
            && asm >= self.median_of(Strategy::SourceOnly) + MARGIN_SOURCE_ONLY
    }

    /// One row per run, then one `median` row per strategy.
    pub fn rows(&self) -> Vec<Vec<Field>> {
        let mut rows = Vec::new();
        for r in &self.results {
            for (&k, &a) in r.seeds.iter().zip(&r.accuracy) {
                rows.push(vec![
                    Field::Text(r.strategy.name().into()),
                    Field::Int(k),
                    Field::Num(a),
                    Field::Text(self.inputs.clone()),
                ]);
            }
        }
        for r in &self.results {
            rows.push(vec![
                Field::Text(r.strategy.name().into()),
                Field::Text("median".into()),
                Field::Num(r.median),
                Field::Text(self.inputs.clone()),
            ]);
        }
        rows
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let accs: Vec<String> = r.accuracy.iter().map(|a| format!("{a:.4}")).collect();
            out += &format!("{:<12} median {:.4}  [{}]\n", r.strategy.name(), r.median, accs.join(", "));
        }
        let (asm, anc, src, rnd) = (
            self.median_of(Strategy::Asm),
            self.median_of(Strategy::Anchored),
            self.median_of(Strategy::SourceOnly),
            self.median_of(Strategy::Random),
        );
        out += &format!(
            "asm - anchored = {:+.4} (need >= {MARGIN_ANCHORED}), asm - source_only = {:+.4} (need >= {MARGIN_SOURCE_ONLY})\n",
            asm - anc,
            asm - src
        );
        out += &format!("anchored - random = {:+.4} (reported only)\n", anc - rnd);
        out += &format!("inputs {}\n", self.inputs);
        out += if self.passed() { "verdict: PASS\n" } else { "verdict: FAIL\n" };
        out
    }
}
