use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::data::{pair_key, write_embeddings, EmbeddingStore};
use crate::error::{Error, Result};
use crate::labels::{Ideology, Subtask};
use crate::model::Model;
use crate::schema::ideology_key;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportRow {
    pub key: String,
    pub label: Ideology,
}

/// JSON sidecar describing an exported representation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub facet: String,
    pub dim: usize,
    pub texts: Vec<ExportRow>,
    /// Record keys of the Left, Center and Right anchors.
    pub anchors: [String; 3],
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes the text representation of every sample related to `facet` plus
/// that facet's three ideology anchors, and a sidecar with labels.
pub fn export_representations(
    model: &Model,
    data: &Dataset<'_>,
    facet: &str,
    path: impl AsRef<Path>,
) -> Result<ExportManifest> {
    let path = path.as_ref();
    if model.config.subtask != Subtask::Ideology {
        return Err(Error::Config("representation export needs an ideology model".into()));
    }
    let pos = data
        .codes
        .iter()
        .position(|c| c == facet)
        .ok_or_else(|| Error::Data(format!("unknown facet code {facet:?}")))?;
    let reps = model.concept_reps()?;
    let mut store = EmbeddingStore::new(model.dim());
    let mut texts = Vec::new();
    for s in data.samples {
        let Some(&label) = s.ideology.get(facet) else {
            continue;
        };
        let v = data.store.vector(&pair_key(&s.id, facet))?;
        let (t, _) = model.ideology_forward(v, pos)?;
        store.insert_vector(s.id.clone(), t)?;
        texts.push(ExportRow {
            key: s.id.clone(),
            label,
        });
    }
    let anchors = Ideology::ALL.map(|i| ideology_key(facet, i));
    for (i, key) in Ideology::ALL.iter().zip(&anchors) {
        store.insert_vector(key.clone(), reps.ideology(pos, *i).as_slice().to_vec())?;
    }
    write_embeddings(path, &store)?;
    let manifest = ExportManifest {
        facet: facet.to_string(),
        dim: model.dim(),
        texts,
        anchors,
    };
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
    Ok(manifest)
}
