//! Sliding-window coresets by merge-and-reduce.
//!
//! Rows enter as level-0 blocks. Two blocks on the same level merge into one
//! block a level up, and the merged rows are reduced by running the online
//! driver over them newest-first. Every suffix of a block is then a prefix
//! of the reduction stream, so the block straddling the window edge still
//! yields a valid coreset for the part inside the window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Namespace};
use crate::sampling::{exact_distortion_l2, Coreset, CoresetEntry, OnlineCoreset, SamplingConfig, WeightMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub p: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub c: f64,
    /// Largest window that may be queried.
    pub window_max: u64,
    /// Stream length cap that fixes the per-merge budget.
    pub n_max: u64,
    /// Merged blocks with at most this many stored rows are not reduced.
    pub reduce_threshold: usize,
    /// Error out when more rows than this are stored at once.
    pub max_live_rows: Option<usize>,
    pub seed: u64,
    /// Measure the exact p = 2 distortion of every reduction.
    pub instrument: bool,
}

impl WindowConfig {
    pub fn new(p: f64, epsilon: f64, delta: f64, window_max: u64) -> Self {
        Self {
            p,
            epsilon,
            delta,
            c: 1.0,
            window_max,
            n_max: 1 << 20,
            reduce_threshold: 0,
            max_live_rows: None,
            seed: 0,
            instrument: false,
        }
    }

    /// `⌈log₂ n_max⌉`, at least 1.
    pub fn depth(&self) -> u32 {
        (self.n_max.max(2) as f64).log2().ceil() as u32
    }

    pub fn merge_epsilon(&self) -> f64 {
        self.epsilon / self.depth() as f64
    }

    pub fn merge_delta(&self) -> f64 {
        self.delta / self.n_max as f64
    }

    fn merge_sampling(&self) -> Result<SamplingConfig> {
        SamplingConfig::with_constant(self.p, self.merge_epsilon(), self.merge_delta(), self.c)
    }

    fn validate(&self) -> Result<()> {
        SamplingConfig::with_constant(self.p, self.epsilon, self.delta, self.c)?;
        if self.window_max == 0 || self.n_max == 0 {
            return Err(Error::Config("window_max and n_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    level: u32,
    start: u64,
    end: u64,
    entries: Vec<CoresetEntry>,
    /// Reductions applied along the deepest chain below this block.
    layers: u32,
    /// Composed relative error of the deepest chain (instrumented runs only).
    bound: f64,
}

/// Summary of one live block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub level: u32,
    pub start: u64,
    pub end: u64,
    pub stored: usize,
    pub layers: u32,
    pub bound: f64,
}

/// One reduction, as recorded by instrumented runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub merge_id: u64,
    pub input_rows: usize,
    pub output_rows: usize,
    pub distortion: f64,
}

#[derive(Clone, Debug)]
pub struct WindowTree {
    config: WindowConfig,
    d: usize,
    blocks: Vec<Block>,
    last: Option<u64>,
    inserted: u64,
    merges: u64,
    peak_live: usize,
    records: Vec<MergeRecord>,
}

impl WindowTree {
    pub fn new(d: usize, config: WindowConfig) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        config.validate()?;
        Ok(Self {
            config,
            d,
            blocks: Vec::new(),
            last: None,
            inserted: 0,
            merges: 0,
            peak_live: 0,
            records: Vec::new(),
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn live_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.entries.len()).sum()
    }

    pub fn peak_live_rows(&self) -> usize {
        self.peak_live
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        self.blocks
            .iter()
            .map(|b| BlockInfo {
                level: b.level,
                start: b.start,
                end: b.end,
                stored: b.entries.len(),
                layers: b.layers,
                bound: b.bound,
            })
            .collect()
    }

    pub fn merge_records(&self) -> &[MergeRecord] {
        &self.records
    }

    pub fn insert(&mut self, row: &[f64], timestamp: u64) -> Result<()> {
        if row.len() != self.d {
            return Err(Error::InvalidInput(format!("row has {} entries, expected {}", row.len(), self.d)));
        }
        crate::error::check_finite(row, "row")?;
        if let Some(l) = self.last {
            if timestamp <= l {
                return Err(Error::InvalidInput(format!("timestamp {timestamp} is not after {l}")));
            }
        }
        self.last = Some(timestamp);
        self.inserted += 1;
        self.blocks.push(Block {
            level: 0,
            start: timestamp,
            end: timestamp,
            entries: vec![CoresetEntry { index: timestamp as usize, row: row.to_vec(), scale: 1.0, prob: 1.0 }],
            layers: 0,
            bound: 0.0,
        });
        while self.blocks.len() >= 2 {
            let n = self.blocks.len();
            if self.blocks[n - 1].level != self.blocks[n - 2].level {
                break;
            }
            let newer = self.blocks.pop().expect("two blocks present");
            let older = self.blocks.pop().expect("two blocks present");
            let merged = self.merge(older, newer)?;
            self.blocks.push(merged);
        }
        self.prune(timestamp);
        let live = self.live_rows();
        self.peak_live = self.peak_live.max(live);
        if let Some(cap) = self.config.max_live_rows {
            if live > cap {
                return Err(Error::Capacity(format!("{live} stored rows exceed the ceiling {cap}")));
            }
        }
        Ok(())
    }

    fn merge(&mut self, older: Block, newer: Block) -> Result<Block> {
        let mut entries = older.entries;
        entries.extend(newer.entries);
        let child_layers = older.layers.max(newer.layers);
        let child_bound = older.bound.max(newer.bound);
        let mut block = Block {
            level: older.level + 1,
            start: older.start,
            end: newer.end,
            entries,
            layers: child_layers,
            bound: child_bound,
        };
        if block.entries.len() > self.config.reduce_threshold {
            let (reduced, distortion) = self.reduce(&block.entries)?;
            block.entries = reduced;
            block.layers += 1;
            if let Some(e) = distortion {
                block.bound = (1.0 + e) * (1.0 + child_bound) - 1.0;
            }
        }
        Ok(block)
    }

    /// Runs the online driver over `entries` newest-first with the per-merge
    /// budget and composes scales and probabilities.
    fn reduce(&mut self, entries: &[CoresetEntry]) -> Result<(Vec<CoresetEntry>, Option<f64>)> {
        let merge_id = self.merges;
        self.merges += 1;
        let cfg = self.config.merge_sampling()?;
        let coins = rng::stream(self.config.seed, Namespace::WindowMerge, merge_id);
        let mut driver = OnlineCoreset::with_coins(self.d, cfg, self.config.seed, WeightMode::Exact, coins)?;
        let mut out = Vec::new();
        for e in entries.iter().rev() {
            let scaled: Vec<f64> = e.row.iter().map(|x| x * e.scale).collect();
            let dec = driver.push(&scaled)?;
            if dec.kept {
                let prob = e.prob * dec.prob;
                out.push(CoresetEntry {
                    index: e.index,
                    row: e.row.clone(),
                    scale: prob.powf(-1.0 / self.config.p),
                    prob,
                });
            }
        }
        out.reverse();
        let distortion = if self.config.instrument {
            let input = Coreset { p: self.config.p, d: self.d, entries: entries.to_vec(), meta: Default::default() };
            let output = Coreset { p: self.config.p, d: self.d, entries: out.clone(), meta: Default::default() };
            let e = relative_l2_distortion(&input, &output);
            self.records.push(MergeRecord {
                merge_id,
                input_rows: entries.len(),
                output_rows: out.len(),
                distortion: e,
            });
            Some(e)
        } else {
            None
        };
        Ok((out, distortion))
    }

    fn prune(&mut self, t: u64) {
        let w = self.config.window_max;
        if t + 1 <= w {
            return;
        }
        let cutoff = t + 1 - w;
        self.blocks.retain(|b| b.end >= cutoff);
        if let Some(b) = self.blocks.first_mut() {
            b.entries.retain(|e| e.index as u64 >= cutoff);
        }
    }

    /// Coreset for rows with timestamps in `[t − W + 1, t]`.
    pub fn query(&self, w: u64) -> Result<Coreset> {
        if w > self.config.window_max {
            return Err(Error::Config(format!("window {w} exceeds the configured maximum {}", self.config.window_max)));
        }
        if w == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        let t = self.last.ok_or_else(|| Error::InvalidInput("no rows inserted".into()))?;
        let cutoff = (t + 1).saturating_sub(w);
        let entries: Vec<CoresetEntry> = self
            .blocks
            .iter()
            .filter(|b| b.end >= cutoff)
            .flat_map(|b| b.entries.iter().filter(|e| e.index as u64 >= cutoff).cloned())
            .collect();
        let mut c = Coreset::empty(self.config.p, self.d);
        c.entries = entries;
        c.meta.seed = self.config.seed;
        c.meta.n = w.min(self.inserted) as usize;
        c.meta.epsilon = self.config.epsilon;
        c.meta.delta = self.config.delta;
        Ok(c)
    }
}

/// Exact p = 2 distortion of `output` relative to the scaled rows of `input`.
pub fn relative_l2_distortion(input: &Coreset, output: &Coreset) -> f64 {
    let a = input.scaled_rows();
    let mut rel = output.clone();
    // Express output scales relative to the input rows' own scales.
    let lookup: std::collections::HashMap<usize, f64> = input.entries.iter().map(|e| (e.index, e.scale)).collect();
    let mut reindexed = Vec::with_capacity(rel.entries.len());
    for e in &rel.entries {
        let s_in = lookup[&e.index];
        reindexed.push(CoresetEntry {
            index: e.index,
            row: e.row.iter().map(|x| x * s_in).collect(),
            scale: e.scale / s_in,
            prob: e.prob,
        });
    }
    rel.entries = reindexed;
    exact_distortion_l2(&a, &rel)
}

pub fn sw_insert(tree: &mut WindowTree, row: &[f64], timestamp: u64) -> Result<()> {
    tree.insert(row, timestamp)
}

pub fn sw_query(tree: &WindowTree, w: u64) -> Result<Coreset> {
    tree.query(w)
}
