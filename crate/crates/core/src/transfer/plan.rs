use serde::{Deserialize, Serialize};

use crate::embedding::FrameEmbedding;
use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::transfer::Checkpoint;

/// Name used for the classifier head in plans.
pub const HEAD_GROUP: &str = "head";
pub const DEFAULT_SLOW_MULTIPLIER: f64 = 0.1;

/// What to do with one layer group when initialising from a source model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "multiplier", rename_all = "snake_case")]
pub enum Directive {
    /// Copy and never update (multiplier 0).
    CopyFrozen,
    /// Copy and update at a reduced rate, `0 < s < 1`.
    CopySlow(f64),
    /// Copy and update at the full rate.
    CopyFast,
    /// Draw fresh parameters and train at multiplier `r >= 1`.
    Reinit(f64),
}

impl Directive {
    pub fn multiplier(self) -> f64 {
        match self {
            Directive::CopyFrozen => 0.0,
            Directive::CopySlow(s) => s,
            Directive::CopyFast => 1.0,
            Directive::Reinit(r) => r,
        }
    }

    fn validate(self, group: &str) -> Result<()> {
        match self {
            Directive::CopySlow(s) if !(s > 0.0 && s < 1.0) => {
                Err(Error::Plan(format!("group `{group}`: slow multiplier {s} outside (0, 1)")))
            }
            Directive::Reinit(r) if !(r >= 1.0 && r.is_finite()) => {
                Err(Error::Plan(format!("group `{group}`: reinit multiplier {r} must be >= 1")))
            }
            _ => Ok(()),
        }
    }
}

/// How the bottom `k` groups are treated in an ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Frozen,
    FineTuned,
}

/// How the groups above the bottom `k` are initialised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Copied from the source and trained at the full rate.
    SplitRate,
    /// Re-initialised and trained from scratch.
    Baseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SplitRate => "split_rate",
            Method::Baseline => "baseline",
        }
    }
}

impl Treatment {
    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Frozen => "frozen",
            Treatment::FineTuned => "fine_tuned",
        }
    }
}

/// Ordered per-group directives, bottom to top, ending with the head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub directives: Vec<(String, Directive)>,
}

impl TransferPlan {
    /// Bottom `k` groups per `treatment`, the remaining groups per `method`,
    /// and a freshly initialised head. Fine-tuned bottoms use `slow`.
    pub fn build(groups: &[&str], k: usize, treatment: Treatment, method: Method, slow: f64) -> Result<Self> {
        if k > groups.len() {
            return Err(Error::Plan(format!("k = {k} exceeds the {} groups", groups.len())));
        }
        let bottom = match treatment {
            Treatment::Frozen => Directive::CopyFrozen,
            Treatment::FineTuned => Directive::CopySlow(slow),
        };
        let top = match method {
            Method::SplitRate => Directive::CopyFast,
            Method::Baseline => Directive::Reinit(1.0),
        };
        let mut directives: Vec<(String, Directive)> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| (g.to_string(), if i < k { bottom } else { top }))
            .collect();
        directives.push((HEAD_GROUP.to_string(), Directive::Reinit(1.0)));
        let plan = TransferPlan { directives };
        for (g, d) in &plan.directives {
            d.validate(g)?;
        }
        Ok(plan)
    }

    /// Bottom three groups frozen, the rest copied at the full rate.
    pub fn split_rate(groups: &[&str]) -> Result<Self> {
        Self::build(groups, 3.min(groups.len()), Treatment::Frozen, Method::SplitRate, DEFAULT_SLOW_MULTIPLIER)
    }

    pub fn directive(&self, group: &str) -> Option<Directive> {
        self.directives.iter().find(|(g, _)| g == group).map(|(_, d)| *d)
    }
}

fn check_coverage(plan: &TransferPlan, target: &FrameEmbedding) -> Result<()> {
    let mut expected: Vec<&str> = target.group_names();
    expected.push(HEAD_GROUP);
    for (i, (g, d)) in plan.directives.iter().enumerate() {
        if !expected.contains(&g.as_str()) {
            return Err(Error::Plan(format!("unknown group `{g}`")));
        }
        if plan.directives[..i].iter().any(|(h, _)| h == g) {
            return Err(Error::Plan(format!("group `{g}` listed twice")));
        }
        d.validate(g)?;
    }
    if let Some(missing) = expected.iter().find(|e| !plan.directives.iter().any(|(g, _)| g == *e)) {
        return Err(Error::Plan(format!("no directive for group `{missing}`")));
    }
    let order: Vec<&str> = plan.directives.iter().map(|(g, _)| g.as_str()).collect();
    if order != expected {
        return Err(Error::Plan(format!("directive order {order:?} differs from model order {expected:?}")));
    }
    Ok(())
}

/// Initialise `target` from `source` under `plan`. The target must already
/// carry a head (its class count decides the reinitialised head's size).
/// Copied tensors are bit-exact; every parameter's multiplier is set from
/// its group's directive and its optimizer state is reset.
pub fn apply_transfer_plan(source: &Checkpoint, target: &mut FrameEmbedding, plan: &TransferPlan, rng: &mut RngStream) -> Result<()> {
    check_coverage(plan, target)?;
    let classes = target
        .head()
        .map(|h| h.classes())
        .ok_or_else(|| Error::Plan("target model has no classifier head".into()))?;
    // Validate every copy before mutating anything.
    for (group, d) in &plan.directives {
        if matches!(d, Directive::Reinit(_)) {
            continue;
        }
        let params: Vec<(String, Vec<usize>)> = if group == HEAD_GROUP {
            target.head().expect("checked").parameters().iter().map(|p| (p.name().to_string(), p.shape().to_vec())).collect()
        } else {
            target
                .groups()
                .iter()
                .find(|g| g.name() == group)
                .expect("coverage checked")
                .parameters()
                .map(|p| (p.name().to_string(), p.shape().to_vec()))
                .collect()
        };
        for (name, shape) in params {
            let t = source
                .tensor(&name)
                .ok_or_else(|| Error::Plan(format!("source has no tensor `{name}` for group `{group}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Plan(format!(
                    "tensor `{name}`: source shape {:?} vs target {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
    }
    for (group, d) in &plan.directives {
        if group == HEAD_GROUP {
            if matches!(d, Directive::Reinit(_)) {
                target.adapt_head(classes, rng)?;
            }
            let head = target.head_mut().expect("checked");
            for p in head.parameters_mut() {
                if !matches!(d, Directive::Reinit(_)) {
                    *p.value_mut() = source.tensor(p.name()).expect("validated").clone();
                }
                p.reset_momentum();
                p.zero_grad();
                p.lr_multiplier = d.multiplier();
            }
            continue;
        }
        match d {
            Directive::Reinit(_) => target.reinit_group(group, rng)?,
            _ => {
                let g = target.group_mut(group).expect("coverage checked");
                for p in g.parameters_mut() {
                    *p.value_mut() = source.tensor(p.name()).expect("validated").clone();
                    p.reset_momentum();
                    p.zero_grad();
                }
            }
        }
        target.set_group_lr(group, d.multiplier())?;
    }
    Ok(())
}
