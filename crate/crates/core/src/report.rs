//! Strategy-by-iteration EER tables (ablation grids and strategy
//! comparisons), rendered as aligned text and CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::{RunConfig, Strategy};
use crate::error::{Error, Result};
use crate::policy::Combo;
use crate::pool::Pool;
use crate::session::{run_simulated, RunLog};

pub const MISSING: &str = "---";

/// Seed-mean sampling rate and EER (both in percent) at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub samp_pct: f64,
    pub eer_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    /// Indexed by iteration - 1.
    pub cells: Vec<Option<Cell>>,
}

impl ReportRow {
    /// Per-iteration means over the runs that reached that iteration and
    /// recorded a test EER.
    pub fn from_runs(label: impl Into<String>, runs: &[&RunLog]) -> Self {
        let len = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
        let cells = (0..len)
            .map(|t| {
                let pts: Vec<(f64, f64)> = runs
                    .iter()
                    .filter_map(|r| r.records.get(t))
                    .filter_map(|rec| rec.test_eer.map(|e| (rec.samp_pct, e)))
                    .collect();
                (!pts.is_empty()).then(|| {
                    let n = pts.len() as f64;
                    Cell {
                        samp_pct: pts.iter().map(|p| p.0).sum::<f64>() / n,
                        eer_pct: 100.0 * pts.iter().map(|p| p.1).sum::<f64>() / n,
                    }
                })
            })
            .collect();
        Self {
            label: label.into(),
            cells,
        }
    }

    pub fn final_eer_pct(&self) -> Option<f64> {
        self.cells.iter().rev().flatten().next().map(|c| c.eer_pct)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBlock {
    pub title: String,
    pub rows: Vec<ReportRow>,
    /// Horizontal reference line (e.g. full supervision), in percent.
    pub reference: Option<(String, f64)>,
}

impl ReportBlock {
    pub fn width(&self) -> usize {
        self.rows.iter().map(|r| r.cells.len()).max().unwrap_or(0)
    }

    /// The block's Samp% row, taken from its first row. Rows that disagree
    /// get their own Samp% line.
    pub fn shared_samp(&self) -> Vec<Option<f64>> {
        let first = self.rows.first();
        (0..self.width())
            .map(|t| {
                first
                    .and_then(|r| r.cells.get(t).copied().flatten())
                    .map(|c| c.samp_pct)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub blocks: Vec<ReportBlock>,
}

pub fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

fn cell_or_missing(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), fmt2)
}

impl ReportTable {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            let width = block.width();
            let shared = block.shared_samp();
            let label_w = block
                .rows
                .iter()
                .map(|r| r.label.len())
                .chain(block.reference.iter().map(|r| r.0.len()))
                .chain([6])
                .max()
                .unwrap_or(6)
                + 2;
            let line = |label: &str, vals: Vec<String>| {
                let mut s = format!("{label:<label_w$}");
                for v in vals {
                    let _ = write!(s, " {v:>7}");
                }
                s.trim_end().to_string() + "\n"
            };
            let _ = writeln!(out, "== {} ==", block.title);
            out += &line("Iter", (1..=width).map(|t| t.to_string()).collect());
            out += &line(
                "Samp%",
                shared.iter().map(|v| cell_or_missing(*v)).collect(),
            );
            for row in &block.rows {
                let cell = |t: usize| row.cells.get(t).copied().flatten();
                out += &line(
                    &row.label,
                    (0..width)
                        .map(|t| cell_or_missing(cell(t).map(|c| c.eer_pct)))
                        .collect(),
                );
                let own_samp = (0..width).any(|t| {
                    cell(t).is_some_and(|c| shared[t].is_none_or(|s| fmt2(s) != fmt2(c.samp_pct)))
                });
                if own_samp {
                    out += &line(
                        "  Samp%",
                        (0..width)
                            .map(|t| cell_or_missing(cell(t).map(|c| c.samp_pct)))
                            .collect(),
                    );
                }
            }
            if let Some((label, v)) = &block.reference {
                out += &line(label, (0..width).map(|_| fmt2(*v)).collect());
            }
            out.push('\n');
        }
        out
    }

    /// Long format: one line per (block, row, iteration).
    pub fn render_csv(&self) -> String {
        let mut out = String::from("block,row,iteration,samp_pct,eer_pct\n");
        for block in &self.blocks {
            let width = block.width();
            let shared = block.shared_samp();
            for row in &block.rows {
                for t in 0..width {
                    let cell = row.cells.get(t).copied().flatten();
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        block.title,
                        row.label,
                        t + 1,
                        cell_or_missing(cell.map(|c| c.samp_pct)),
                        cell_or_missing(cell.map(|c| c.eer_pct)),
                    );
                }
            }
            if let Some((label, v)) = &block.reference {
                for t in 0..width {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        block.title,
                        label,
                        t + 1,
                        cell_or_missing(shared[t]),
                        fmt2(*v)
                    );
                }
            }
        }
        out
    }
}

/// Row label used in ablation tables.
pub fn row_label(strategy: Strategy) -> String {
    match strategy {
        Strategy::Fixed(Combo::All) => "all (flat)".to_string(),
        Strategy::Fixed(c) => c.name().to_string(),
        Strategy::RlFixedSize => "RL-based".to_string(),
        Strategy::RlAdaptive => "RL-adaptive".to_string(),
        other => other.to_string(),
    }
}

/// The nine ablation rows of one display-size block.
pub fn ablation_strategies() -> Vec<Strategy> {
    Combo::ALL
        .iter()
        .map(|&c| Strategy::Fixed(c))
        .chain([Strategy::RlFixedSize, Strategy::RlAdaptive])
        .collect()
}

/// Runs every (display size, strategy, seed) combination in parallel and
/// assembles one block per display size. Results are keyed, so the table
/// does not depend on scheduling order.
pub fn run_ablation(
    train: &Pool,
    test: &Pool,
    base: &RunConfig,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<ReportTable> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::param(
            "ablation needs at least one size and one seed",
        ));
    }
    let strategies = ablation_strategies();
    let jobs: Vec<(usize, Strategy, u64)> = sizes
        .iter()
        .flat_map(|&size| {
            strategies
                .iter()
                .flat_map(move |&s| seeds.iter().map(move |&seed| (size, s, seed)))
        })
        .collect();
    let results: BTreeMap<(usize, Strategy, u64), RunLog> = jobs
        .par_iter()
        .map(|&(size, strategy, seed)| {
            let cfg = RunConfig {
                strategy,
                display_size: size,
                ..base.clone()
            };
            run_simulated(train, test, &cfg, seed).map(|log| ((size, strategy, seed), log))
        })
        .collect::<Result<_>>()?;

    let reference = results
        .values()
        .filter_map(|l| l.header.full_supervision_eer)
        .next()
        .map(|e| ("fully-supervised".to_string(), 100.0 * e));
    let blocks = sizes
        .iter()
        .map(|&size| {
            let rows = strategies
                .iter()
                .map(|&s| {
                    let runs: Vec<&RunLog> = seeds
                        .iter()
                        .map(|&seed| &results[&(size, s, seed)])
                        .collect();
                    ReportRow::from_runs(row_label(s), &runs)
                })
                .collect();
            ReportBlock {
                title: format!("display size {size}"),
                rows,
                reference: reference.clone(),
            }
        })
        .collect();
    Ok(ReportTable { blocks })
}

/// Groups run logs by strategy into one comparison block. All runs must
/// come from the same train/test pools.
pub fn compare_runs(runs: &[RunLog]) -> Result<ReportTable> {
    let first = runs
        .first()
        .ok_or_else(|| Error::param("no run logs given"))?;
    for r in runs {
        if r.header.train_pool.digest != first.header.train_pool.digest
            || r.header.test_pool.as_ref().map(|p| &p.digest)
                != first.header.test_pool.as_ref().map(|p| &p.digest)
        {
            return Err(Error::param(format!(
                "run logs use different pools: {} vs {}",
                first.header.train_pool.name, r.header.train_pool.name
            )));
        }
    }
    let mut groups: BTreeMap<String, Vec<&RunLog>> = BTreeMap::new();
    for r in runs {
        let key = format!(
            "{} (size {})",
            r.header.config.strategy, r.header.config.display_size
        );
        groups.entry(key).or_default().push(r);
    }
    let rows = groups
        .iter()
        .map(|(label, logs)| ReportRow::from_runs(label.clone(), logs))
        .collect();
    let refs: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.header.full_supervision_eer)
        .collect();
    let reference = (!refs.is_empty()).then(|| {
        (
            "fully-supervised".to_string(),
            100.0 * refs.iter().sum::<f64>() / refs.len() as f64,
        )
    });
    Ok(ReportTable {
        blocks: vec![ReportBlock {
            title: "strategy comparison".to_string(),
            rows,
            reference,
        }],
    })
}
