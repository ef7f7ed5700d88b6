use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conv::{embed, Embedding, FilterBank};
use crate::error::{Error, Result};
use crate::objective::{Hyperparams, ModelParams};
use crate::windowing::SequenceSample;

pub const MODEL_MAGIC: &str = "XMCNN";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub iterations: usize,
}

/// A trained model: parameters plus the hyperparameters they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hyper: Hyperparams,
    pub params: ModelParams,
    pub provenance: Provenance,
}

impl Model {
    pub fn embed(&self, sample: &SequenceSample) -> Result<Embedding> {
        let bank = self.params.banks.get(sample.modality).ok_or_else(|| {
            Error::invalid(format!(
                "model has no filter bank for modality {}",
                sample.modality + 1
            ))
        })?;
        embed(sample, bank, self.hyper.window(sample.modality))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankBody {
    modality: usize,
    filters: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBody {
    hyperparams: Hyperparams,
    banks: Vec<BankBody>,
    v: Vec<f64>,
    provenance: Provenance,
}

fn to_text(model: &Model) -> String {
    let body = ModelBody {
        hyperparams: model.hyper.clone(),
        banks: model
            .params
            .banks
            .iter()
            .map(|b| BankBody {
                modality: b.modality + 1,
                filters: b.filters.clone(),
            })
            .collect(),
        v: model.params.v.iter().copied().collect(),
        provenance: model.provenance,
    };
    let json = serde_json::to_string_pretty(&body).expect("model values are finite");
    format!("{MODEL_MAGIC} {MODEL_VERSION}\n{json}\n")
}

fn from_text(text: &str) -> Result<Model> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Corrupt("missing header line".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MODEL_MAGIC) {
        return Err(Error::Corrupt(format!("expected magic `{MODEL_MAGIC}`")));
    }
    let found: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Corrupt("missing or malformed version".into()))?;
    if found != MODEL_VERSION {
        return Err(Error::Version {
            found,
            expected: MODEL_VERSION,
        });
    }
    let body: ModelBody = serde_json::from_str(body).map_err(|e| Error::Corrupt(e.to_string()))?;
    let hyper = body.hyperparams;
    hyper
        .validate(body.banks.len())
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    if body.v.len() != hyper.filters {
        return Err(Error::Corrupt(format!(
            "classifier has {} entries, expected {}",
            body.v.len(),
            hyper.filters
        )));
    }
    let mut banks = Vec::with_capacity(body.banks.len());
    for (j, b) in body.banks.into_iter().enumerate() {
        if b.modality != j + 1 {
            return Err(Error::Corrupt(format!(
                "bank {} is labelled modality {}",
                j + 1,
                b.modality
            )));
        }
        let dim = b.filters.first().map_or(0, Vec::len);
        if b.filters.len() != hyper.filters || dim == 0 || b.filters.iter().any(|f| f.len() != dim)
        {
            return Err(Error::Corrupt(format!(
                "malformed filter bank for modality {}",
                j + 1
            )));
        }
        banks.push(FilterBank {
            modality: j,
            filters: b.filters,
        });
    }
    Ok(Model {
        hyper,
        params: ModelParams {
            banks,
            v: DVector::from_vec(body.v),
        },
        provenance: body.provenance,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path)?;
    from_text(&text)
}
