use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{PreparedDataset, Split};
use crate::embedding::FrameEmbedding;
use crate::error::{Error, Result};
use crate::eval::{EvalMode, Evaluator};
use crate::numeric::RngStream;
use crate::sequence::Attention;
use crate::train::{train_embedding, EpochRecord, TrainConfig};
use crate::transfer::{apply_transfer_plan, Checkpoint, Method, TransferPlan, Treatment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k_values: Vec<usize>,
    pub methods: Vec<Method>,
    pub treatment: Treatment,
    pub seeds: Vec<u64>,
    pub slow_multiplier: f64,
    /// Budget of the single-frame training run after the transfer.
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub treatment: Treatment,
    pub k: usize,
    pub seed: u64,
    pub top1: f64,
}

/// Build a target for `data` from `source` under `plan`, train it as a
/// single-frame classifier and return it with its test top-1 accuracy.
pub fn transfer_and_train(
    source: &Checkpoint,
    data: &PreparedDataset,
    plan: &TransferPlan,
    train: &TrainConfig,
    seed: u64,
    log: impl FnMut(&EpochRecord),
) -> Result<(FrameEmbedding, f64)> {
    let root = RngStream::new(seed);
    let mut target = FrameEmbedding::build(&source.embedding, &mut root.fork(1))?;
    target.adapt_head(data.classes, &mut root.fork(2))?;
    apply_transfer_plan(source, &mut target, plan, &mut root.fork(3))?;
    train_embedding(&mut target, data, train, &mut root.fork(4), log)?;
    let report = Evaluator {
        embedding: &target,
        sequence: None,
        history: train.rho,
    }
    .evaluate(data, Split::Test, EvalMode::SingleShot, Attention::Uniform, None)?;
    Ok((target, report.top1))
}

/// Top-1 accuracy for every (method, k, seed) point, in that nesting order.
pub fn ablation_sweep(source: &Checkpoint, data: &PreparedDataset, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let groups = FrameEmbedding::build(&source.embedding, &mut RngStream::new(0))?;
    let names = groups.group_names();
    if let Some(&k) = cfg.k_values.iter().find(|&&k| k > names.len()) {
        return Err(Error::config("transfer.k", format!("{k} exceeds the {} layer groups", names.len())));
    }
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &k in &cfg.k_values {
            let plan = TransferPlan::build(&names, k, cfg.treatment, method, cfg.slow_multiplier)?;
            for &seed in &cfg.seeds {
                let (_, top1) = transfer_and_train(source, data, &plan, &cfg.train, seed, |_| {})?;
                log::info!("sweep {} {} k={k} seed={seed}: top1 {top1:.4}", method.as_str(), cfg.treatment.as_str());
                rows.push(SweepRow {
                    method,
                    treatment: cfg.treatment,
                    k,
                    seed,
                    top1,
                });
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("method,treatment,k,seed,top1\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.method.as_str(), r.treatment.as_str(), r.k, r.seed, r.top1);
    }
    s
}
