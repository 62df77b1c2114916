//! The six end-to-end scenarios.

pub mod communication;
pub mod deontic;
pub mod doxastic;
pub mod epistemic;
pub mod orchestration;
pub mod temporal;

use serde::Serialize;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::optim::{Optimizer, Param};
use crate::table::Table;

/// One output file of a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Table {
        name: String,
        table: Table,
    },
    Json {
        name: String,
        value: serde_json::Value,
    },
}

impl Artifact {
    pub fn table(name: &str, table: Table) -> Self {
        Artifact::Table {
            name: name.to_string(),
            table,
        }
    }

    pub fn json(name: &str, value: &impl Serialize) -> Result<Self> {
        Ok(Artifact::Json {
            name: name.to_string(),
            value: serde_json::to_value(value)?,
        })
    }

    /// Base name without extension.
    pub fn name(&self) -> &str {
        match self {
            Artifact::Table { name, .. } | Artifact::Json { name, .. } => name,
        }
    }
}

/// Everything a scenario produces: files plus headline metrics.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub artifacts: Vec<Artifact>,
    pub metrics: MetricsReport,
}

/// Records `params` on a fresh tape, evaluates `loss`, and steps the
/// optimizer. Returns the loss value before the update.
pub(crate) fn descend(
    opt: &mut Optimizer,
    params: &mut [Param],
    context: &'static str,
    loss: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut t = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| t.var(p.value.clone())).collect();
    let root = loss(&mut t, &vars)?;
    let value = t.value(root).item();
    if !value.is_finite() {
        return Err(Error::Divergence(context));
    }
    let g = t.backward(root)?;
    let grads: Vec<Tensor> = vars.iter().map(|&v| g.wrt(v)).collect();
    opt.step(params, &grads)?;
    Ok(value)
}
