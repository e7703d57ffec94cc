//! Permutation set JSON, version `c2m3-perms/v1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perm::Permutation;

use super::{MatchTrace, PairwiseMatch, UniverseMatch};

pub const PERMS_FORMAT_VERSION: &str = "c2m3-perms/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Pairwise,
    Universe,
}

/// On-disk form of a match result. `perms[p]` holds model p's per-layer
/// permutations; pairwise matches store one stack under the second model
/// (the one being permuted). The converged flag and final hard objective are
/// not round-tripped.
#[derive(Debug, Clone)]
pub struct MatchDocument {
    pub mode: MatchMode,
    pub models: Vec<String>,
    pub perms: Vec<Vec<Permutation>>,
    pub trace: MatchTrace,
}

#[derive(Serialize, Deserialize)]
struct LayerEntry {
    model: usize,
    layer: usize,
    map: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TraceRepr {
    objective: Vec<f64>,
    steps: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Doc {
    format: String,
    mode: MatchMode,
    models: Vec<String>,
    layers: Vec<LayerEntry>,
    trace: TraceRepr,
}

impl MatchDocument {
    pub fn from_pairwise(m: &PairwiseMatch, model_a: &str, model_b: &str) -> Self {
        Self {
            mode: MatchMode::Pairwise,
            models: vec![model_a.to_string(), model_b.to_string()],
            perms: vec![m.perms.clone()],
            trace: m.trace.clone(),
        }
    }

    pub fn from_universe(u: &UniverseMatch, model_ids: &[String]) -> Result<Self> {
        if model_ids.len() != u.perms.len() {
            return Err(Error::InvalidInput(format!(
                "{} model ids for {} permutation stacks",
                model_ids.len(),
                u.perms.len()
            )));
        }
        Ok(Self {
            mode: MatchMode::Universe,
            models: model_ids.to_vec(),
            perms: u.perms.clone(),
            trace: u.trace.clone(),
        })
    }

    /// Pairwise stacks sit under model index 1; universe stacks under 0..n.
    fn model_offset(&self) -> usize {
        match self.mode {
            MatchMode::Pairwise => 1,
            MatchMode::Universe => 0,
        }
    }
}

pub fn save_match(doc: &MatchDocument) -> Vec<u8> {
    let offset = doc.model_offset();
    let layers = doc
        .perms
        .iter()
        .enumerate()
        .flat_map(|(p, stack)| {
            stack.iter().enumerate().map(move |(l, perm)| LayerEntry {
                model: p + offset,
                layer: l,
                map: perm.map().to_vec(),
            })
        })
        .collect();
    let repr = Doc {
        format: PERMS_FORMAT_VERSION.to_string(),
        mode: doc.mode,
        models: doc.models.clone(),
        layers,
        trace: TraceRepr {
            objective: doc.trace.objective_per_iter.clone(),
            steps: doc.trace.step_sizes.clone(),
        },
    };
    serde_json::to_vec_pretty(&repr).expect("match document serializes")
}

pub fn load_match(bytes: &[u8]) -> Result<MatchDocument> {
    let doc: Doc = serde_json::from_slice(bytes).map_err(|e| Error::Format(e.to_string()))?;
    if doc.format != PERMS_FORMAT_VERSION {
        return Err(Error::Format(format!("unknown format version {:?}", doc.format)));
    }
    let (offset, stacks) = match doc.mode {
        MatchMode::Pairwise => {
            if doc.models.len() != 2 {
                return Err(Error::Format(format!(
                    "pairwise match must list 2 models, got {}",
                    doc.models.len()
                )));
            }
            (1, 1)
        }
        MatchMode::Universe => {
            if doc.models.len() < 2 {
                return Err(Error::Format(format!(
                    "universe match must list at least 2 models, got {}",
                    doc.models.len()
                )));
            }
            (0, doc.models.len())
        }
    };
    let num_layers = doc.layers.len() / stacks.max(1);
    if stacks == 0 || doc.layers.len() != stacks * num_layers || num_layers == 0 {
        return Err(Error::Format("layer entries do not tile the model set".into()));
    }
    let mut perms: Vec<Vec<Option<Permutation>>> = vec![vec![None; num_layers]; stacks];
    for entry in doc.layers {
        let p = entry
            .model
            .checked_sub(offset)
            .filter(|&p| p < stacks)
            .ok_or_else(|| Error::Format(format!("layer entry for bad model {}", entry.model)))?;
        if entry.layer >= num_layers || perms[p][entry.layer].is_some() {
            return Err(Error::Format(format!(
                "duplicate or out-of-range layer {} for model {}",
                entry.layer, entry.model
            )));
        }
        perms[p][entry.layer] =
            Some(Permutation::new(entry.map).map_err(|e| Error::Format(e.to_string()))?);
    }
    let perms: Vec<Vec<Permutation>> = perms
        .into_iter()
        .map(|stack| {
            stack
                .into_iter()
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Format("missing layer entry".into()))
        })
        .collect::<Result<_>>()?;
    for stack in &perms {
        for (l, perm) in stack.iter().enumerate() {
            if perm.size() != perms[0][l].size() {
                return Err(Error::Format(format!(
                    "layer {l} permutation sizes disagree across models"
                )));
            }
        }
    }
    let iterations = doc.trace.steps.len();
    Ok(MatchDocument {
        mode: doc.mode,
        models: doc.models,
        perms,
        trace: MatchTrace {
            objective_per_iter: doc.trace.objective,
            step_sizes: doc.trace.steps,
            converged: false,
            iterations,
        },
    })
}
