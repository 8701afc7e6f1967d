//! Experiment grids: allocator × scheduler × seed, optionally swept over K or p.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use rmfs_core::batch::map_items;
use rmfs_core::datagen::{Dataset, Scale, ScenarioConfig};
use rmfs_core::{gen_instance, run_episode, AllocatorKind, EpisodeOutcome, SchedulerKind, SimConfig};

/// Where each seed's instance comes from.
#[derive(Clone, Debug)]
pub enum InstanceSource {
    /// Generate one instance per seed.
    Scenario {
        scenario: String,
        scale: Scale,
        orders: Option<usize>,
    },
    /// Use the same file for every seed.
    File(PathBuf),
}

impl InstanceSource {
    pub fn load(&self, seed: u64) -> anyhow::Result<Dataset> {
        match self {
            InstanceSource::Scenario {
                scenario,
                scale,
                orders,
            } => {
                let mut cfg = ScenarioConfig::preset(scenario, *scale, seed)
                    .ok_or_else(|| anyhow::anyhow!("unknown scenario `{scenario}`"))?;
                if let Some(n) = orders {
                    cfg.num_orders = *n;
                }
                Ok(gen_instance(&cfg)?)
            }
            InstanceSource::File(path) => Ok(Dataset::load(path)?),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    /// Soft-allocation top-K.
    K,
    /// Norm exponent of the potential.
    P,
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "K" | "k" => Ok(SweepParam::K),
            "p" | "P" => Ok(SweepParam::P),
            other => Err(format!("unknown sweep parameter `{other}`, expected K or p")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grid {
    pub source: InstanceSource,
    pub allocators: Vec<AllocatorKind>,
    pub schedulers: Vec<SchedulerKind>,
    pub seeds: Vec<u64>,
    pub sweep: Option<(SweepParam, Vec<f64>)>,
    /// Template for everything the grid does not vary.
    pub base: SimConfig,
}

#[derive(Clone, Debug)]
struct Cell {
    seed_index: usize,
    config: SimConfig,
    scheduler: SchedulerKind,
}

/// Bumped whenever a results column changes meaning or position.
pub const RESULTS_SCHEMA: u32 = 1;

/// One episode of a grid run, as written to the results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub schema: u32,
    pub dataset: String,
    pub allocator: String,
    pub scheduler: String,
    pub seed: u64,
    pub k: usize,
    pub p: f64,
    pub makespan: u64,
    pub mean_completion_time: f64,
    pub wall_ms: f64,
    pub throughput: f64,
    pub hit_rate: f64,
    pub mean_travel: f64,
    pub completed: usize,
    pub orders: usize,
    /// Empty when the episode finished.
    pub error: String,
}

impl ResultsRow {
    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

impl Grid {
    fn cells(&self) -> Vec<Cell> {
        let values: Vec<Option<f64>> = match &self.sweep {
            Some((_, v)) => v.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::new();
        for &value in &values {
            for &allocator in &self.allocators {
                for &scheduler in &self.schedulers {
                    for (seed_index, &seed) in self.seeds.iter().enumerate() {
                        let mut config = SimConfig {
                            allocator,
                            seed,
                            ..self.base.clone()
                        };
                        match (self.sweep.as_ref().map(|s| s.0), value) {
                            (Some(SweepParam::K), Some(v)) => config.k = v as usize,
                            (Some(SweepParam::P), Some(v)) => config.shaping.p = v,
                            _ => {}
                        }
                        cells.push(Cell {
                            seed_index,
                            config,
                            scheduler,
                        });
                    }
                }
            }
        }
        cells
    }

    /// Runs every cell; episodes run in parallel when the core allows it.
    pub fn run(&self) -> anyhow::Result<Vec<ResultsRow>> {
        let datasets = self
            .seeds
            .iter()
            .map(|&s| self.source.load(s))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let cells = self.cells();
        log::info!("running {} episodes", cells.len());
        Ok(map_items(&cells, |cell| {
            let ds = &datasets[cell.seed_index];
            let start = Instant::now();
            let outcome = run_episode(ds, &cell.config, cell.scheduler);
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            row(ds, &cell.config, &cell.scheduler.to_string(), outcome.as_ref().map_err(|e| e.to_string()), wall_ms)
        }))
    }
}

/// Builds a results row from a finished (or failed) episode.
pub fn row(
    ds: &Dataset,
    config: &SimConfig,
    scheduler: &str,
    outcome: Result<&EpisodeOutcome, String>,
    wall_ms: f64,
) -> ResultsRow {
    let mut r = ResultsRow {
        schema: RESULTS_SCHEMA,
        dataset: ds.name.clone(),
        allocator: config.allocator.to_string(),
        scheduler: scheduler.to_string(),
        seed: config.seed,
        k: config.k,
        p: config.shaping.p,
        makespan: 0,
        mean_completion_time: 0.0,
        wall_ms,
        throughput: 0.0,
        hit_rate: 0.0,
        mean_travel: 0.0,
        completed: 0,
        orders: ds.orders.len(),
        error: String::new(),
    };
    match outcome {
        Ok(o) => {
            let m = &o.metrics;
            r.makespan = m.makespan;
            r.mean_completion_time = m.mean_completion_time;
            r.throughput = m.throughput;
            r.hit_rate = m.hit_rate;
            r.mean_travel = m.mean_travel;
            r.completed = m.completed;
            r.orders = m.orders;
        }
        Err(e) => r.error = e,
    }
    r
}

pub fn write_csv(rows: &[ResultsRow], out: impl Write) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl std::io::Read) -> anyhow::Result<Vec<ResultsRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Sample mean and standard deviation (n − 1 denominator).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std, n }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub allocator: String,
    pub scheduler: String,
    pub k: usize,
    pub p: f64,
    pub makespan: MeanStd,
    pub completion: MeanStd,
    pub failures: usize,
}

/// Aggregates rows over seeds. Failed episodes are counted, not averaged.
pub fn summarize(rows: &[ResultsRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(String, String, usize, u64), Vec<&ResultsRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.allocator.clone(), r.scheduler.clone(), r.k, r.p.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((allocator, scheduler, k, p), rs)| {
            let ok: Vec<&&ResultsRow> = rs.iter().filter(|r| !r.failed()).collect();
            CellSummary {
                allocator,
                scheduler,
                k,
                p: f64::from_bits(p),
                makespan: MeanStd::of(&ok.iter().map(|r| r.makespan as f64).collect::<Vec<_>>()),
                completion: MeanStd::of(&ok.iter().map(|r| r.mean_completion_time).collect::<Vec<_>>()),
                failures: rs.len() - ok.len(),
            }
        })
        .collect()
}

pub fn print_summary(summary: &[CellSummary], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<8} {:<9} {:>4} {:>5} {:>20} {:>20} {:>6}",
        "alloc", "sched", "K", "p", "makespan", "completion", "failed"
    )?;
    for c in summary {
        writeln!(
            out,
            "{:<8} {:<9} {:>4} {:>5} {:>20} {:>20} {:>6}",
            c.allocator,
            c.scheduler,
            c.k,
            c.p,
            c.makespan.to_string(),
            c.completion.to_string(),
            c.failures
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_examples() {
        let m = MeanStd::of(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m.mean, 5.0);
        assert!((m.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[3.0]).std, 0.0);
    }

    #[test]
    fn sweep_param_names() {
        assert_eq!("K".parse::<SweepParam>().unwrap(), SweepParam::K);
        assert_eq!("p".parse::<SweepParam>().unwrap(), SweepParam::P);
        assert!("q".parse::<SweepParam>().is_err());
    }
}
