//! Identification metrics (top-k, CMC, nAUC) and the single-shot and
//! multi-shot evaluation protocols.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PreparedDataset, Split};
use crate::embedding::FrameEmbedding;
use crate::error::{Error, Result};
use crate::numeric::{Mode, RngStream};
use crate::sequence::{Attention, SequenceModel};
use crate::train::embed_dataset;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Cumulative matching characteristic over `classes` identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub classes: usize,
    /// `topk[k - 1]` is the fraction of probes whose truth ranks within the
    /// first `k` classes.
    pub topk: Vec<f64>,
    pub nauc: f64,
}

impl CmcCurve {
    pub fn top1(&self) -> f64 {
        self.topk[0]
    }

    /// Build from explicit top-k values (must be nondecreasing, in [0, 1]).
    pub fn from_topk(topk: Vec<f64>) -> Result<Self> {
        if topk.is_empty() {
            return Err(Error::InvalidArgument("CMC needs at least one rank".into()));
        }
        if topk.iter().any(|v| !(0.0..=1.0).contains(v)) || topk.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(format!("invalid CMC values {topk:?}")));
        }
        let mut curve = CmcCurve {
            classes: topk.len(),
            topk,
            nauc: 0.0,
        };
        curve.nauc = nauc(&curve);
        Ok(curve)
    }

    /// One `k,topk` row per rank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,topk\n");
        for (k, v) in self.topk.iter().enumerate() {
            let _ = writeln!(s, "{},{v}", k + 1);
        }
        s
    }
}

/// 0-based rank of `truth`: classes with a larger posterior come first, and
/// equal posteriors are ordered by ascending class index.
pub fn truth_rank(posterior: &[f64], truth: usize) -> usize {
    let pt = posterior[truth];
    posterior
        .iter()
        .enumerate()
        .filter(|&(j, &p)| p > pt || (p == pt && j < truth))
        .count()
}

pub fn topk_and_cmc(predictions: &[Vec<f64>], truths: &[usize]) -> Result<CmcCurve> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("empty probe set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::shape(
            "topk_and_cmc",
            format!("{} predictions vs {} truths", predictions.len(), truths.len()),
        ));
    }
    let n = predictions[0].len();
    let mut hist = vec![0usize; n];
    for (p, &t) in predictions.iter().zip(truths) {
        if p.len() != n {
            return Err(Error::shape("topk_and_cmc", format!("posterior length {} vs {n}", p.len())));
        }
        if t >= n {
            return Err(Error::InvalidArgument(format!("truth {t} outside {n} classes")));
        }
        hist[truth_rank(p, t)] += 1;
    }
    let m = predictions.len();
    let mut acc = 0usize;
    let mut area = 0u128;
    let topk = hist
        .into_iter()
        .map(|h| {
            acc += h;
            area += acc as u128;
            acc as f64 / m as f64
        })
        .collect();
    // Integer area under the cumulative counts, rounded once.
    let nauc = area as f64 / (m as u128 * n as u128) as f64;
    Ok(CmcCurve { classes: n, topk, nauc })
}

/// Mean of the top-k accuracies over `k = 1..N`.
pub fn nauc(curve: &CmcCurve) -> f64 {
    curve.topk.iter().sum::<f64>() / curve.topk.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Every frame is a probe, scored by the embedding and its head.
    SingleShot,
    /// Every sequence is a probe, scored by fused LSTM posteriors.
    MultiShot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// 1-based identity.
    pub person_id: u32,
    pub probes: usize,
    pub top1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: EvalMode,
    pub attention: Option<Attention>,
    pub probes: usize,
    pub top1: f64,
    pub nauc: f64,
    pub cmc: CmcCurve,
    pub per_class: Vec<ClassReport>,
}

impl EvalReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let metrics = dir.join("metrics.json");
        std::fs::write(&metrics, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&metrics, e))?;
        let cmc = dir.join("cmc.csv");
        std::fs::write(&cmc, self.cmc.to_csv()).map_err(|e| Error::io(&cmc, e))
    }
}

/// What to evaluate with. Multi-shot needs the sequence model.
pub struct Evaluator<'a> {
    pub embedding: &'a FrameEmbedding,
    pub sequence: Option<&'a SequenceModel>,
    /// History window of the LSTM at evaluation time.
    pub history: usize,
}

impl Evaluator<'_> {
    /// Score the sequences of `split`. `cache` may hold precomputed
    /// evaluation-mode embeddings (`[sequence][frame]`) for multi-shot runs.
    pub fn evaluate(
        &self,
        data: &PreparedDataset,
        split: Split,
        mode: EvalMode,
        attention: Attention,
        cache: Option<&[Vec<Vec<f64>>]>,
    ) -> Result<EvalReport> {
        let indices = data.split_indices(split);
        if indices.is_empty() {
            return Err(Error::InvalidArgument(format!("split `{}` is empty", split.as_str())));
        }
        let classes = match mode {
            EvalMode::SingleShot => self
                .embedding
                .head()
                .ok_or_else(|| Error::InvalidArgument("single-shot evaluation needs a classifier head".into()))?
                .classes(),
            EvalMode::MultiShot => self
                .sequence
                .ok_or_else(|| Error::InvalidArgument("multi-shot evaluation needs a sequence model".into()))?
                .classes(),
        };
        if let Some(&i) = indices.iter().find(|&&i| data.sequences[i].label >= classes) {
            let s = &data.sequences[i];
            return Err(Error::InvalidArgument(format!(
                "person {} (seq {}) is not among the model's {classes} identities",
                s.person_id, s.sequence_id
            )));
        }

        let mut predictions = Vec::new();
        let mut truths = Vec::new();
        let mut rng = RngStream::new(0);
        let owned;
        let cache = match (mode, cache) {
            (EvalMode::MultiShot, None) => {
                owned = embed_dataset(self.embedding, data)?;
                Some(owned.as_slice())
            }
            (_, c) => c,
        };
        for &i in &indices {
            let seq = &data.sequences[i];
            match mode {
                EvalMode::SingleShot => {
                    for f in &seq.frames {
                        predictions.push(self.embedding.classify(f, Mode::Eval, &mut rng)?.0);
                        truths.push(seq.label);
                    }
                }
                EvalMode::MultiShot => {
                    let gs = &cache.expect("cache built above")[i];
                    let refs: Vec<&[f64]> = gs.iter().map(Vec::as_slice).collect();
                    let model = self.sequence.expect("checked above");
                    predictions.push(model.predict_sequence(&refs, self.history, attention)?.fused);
                    truths.push(seq.label);
                }
            }
        }
        let cmc = topk_and_cmc(&predictions, &truths)?;
        let mut per_class: Vec<ClassReport> = (0..classes)
            .map(|c| ClassReport {
                person_id: c as u32 + 1,
                probes: 0,
                top1: 0.0,
            })
            .collect();
        for (p, &t) in predictions.iter().zip(&truths) {
            per_class[t].probes += 1;
            if truth_rank(p, t) == 0 {
                per_class[t].top1 += 1.0;
            }
        }
        for r in &mut per_class {
            if r.probes > 0 {
                r.top1 /= r.probes as f64;
            }
        }
        per_class.retain(|r| r.probes > 0);
        Ok(EvalReport {
            schema_version: METRICS_SCHEMA_VERSION,
            mode,
            attention: (mode == EvalMode::MultiShot).then_some(attention),
            probes: predictions.len(),
            top1: cmc.top1(),
            nauc: cmc.nauc,
            cmc,
            per_class,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_probe_ranked_first() {
        let c = topk_and_cmc(&[vec![0.1, 0.7, 0.2]], &[1]).unwrap();
        assert_eq!(c.topk, vec![1.0, 1.0, 1.0]);
        assert_eq!(c.nauc, 1.0);
    }

    #[test]
    fn two_probe_example() {
        let preds = vec![vec![0.7, 0.1, 0.1, 0.1], vec![0.4, 0.3, 0.2, 0.1]];
        let c = topk_and_cmc(&preds, &[0, 2]).unwrap();
        assert_eq!(c.topk, vec![0.5, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn nauc_example() {
        let c = CmcCurve::from_topk(vec![0.5, 0.75, 1.0, 1.0]).unwrap();
        assert_eq!(c.nauc, 0.8125);
    }

    #[test]
    fn ties_rank_by_class_index() {
        assert_eq!(truth_rank(&[0.5, 0.5], 0), 0);
        assert_eq!(truth_rank(&[0.5, 0.5], 1), 1);
        assert_eq!(truth_rank(&[0.25; 4], 3), 3);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(topk_and_cmc(&[], &[]).is_err());
        assert!(topk_and_cmc(&[vec![0.5, 0.5]], &[2]).is_err());
        assert!(topk_and_cmc(&[vec![0.5, 0.5], vec![1.0]], &[0, 0]).is_err());
        assert!(CmcCurve::from_topk(vec![0.6, 0.5]).is_err());
    }

    #[test]
    fn csv_has_one_row_per_rank() {
        let c = CmcCurve::from_topk(vec![0.5, 1.0]).unwrap();
        assert_eq!(c.to_csv(), "k,topk\n1,0.5\n2,1\n");
    }
}
