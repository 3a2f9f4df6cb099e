//! Trained hash model, out-of-sample encoding and the model file.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::anchor_graph::AnchorSet;
use crate::codes::CodeMatrix;
use crate::dataset::{FeatureMatrix, NormStats};
use crate::error::{Error, Result};
use crate::stiefel::StiefelPoint;
use crate::trainer::TrainConfig;

pub const MODEL_FORMAT: &str = "lpmgh-model";
pub const MODEL_VERSION: u32 = 1;

/// Per-view projections and weights learned by [`crate::trainer::train`].
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    pub bits: usize,
    pub projections: Vec<StiefelPoint>,
    pub mu: Vec<f64>,
    pub norm_stats: Vec<NormStats>,
    pub anchors: Vec<AnchorSet>,
    pub config: TrainConfig,
}

impl HashModel {
    pub fn num_views(&self) -> usize {
        self.projections.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.projections.iter().map(StiefelPoint::dim).collect()
    }

    /// Codes for new samples: `sgn(Σ_m X_m W_m / μ_m)` on normalized features.
    pub fn encode(&self, features: &[FeatureMatrix]) -> Result<CodeMatrix> {
        encode(self, features)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HashModel::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            bits: self.bits,
            num_views: self.num_views(),
            dims: self.dims(),
            mu: self.mu.clone(),
            views: self
                .projections
                .iter()
                .zip(&self.norm_stats)
                .zip(&self.anchors)
                .map(|((w, stats), anchors)| ViewRecord {
                    projection: StoredMatrix::from(w.matrix()),
                    norm: stats.clone(),
                    anchors: StoredMatrix::from(&anchors.centers),
                })
                .collect(),
            config: self.config.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Format(format!("model serialization: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("model file: {e}")))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("model file: unknown format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!("model file: unsupported version {}", file.version)));
        }
        if file.views.len() != file.num_views || file.mu.len() != file.num_views || file.dims.len() != file.num_views {
            return Err(Error::Format("model file: view counts disagree".into()));
        }
        let mut projections = Vec::with_capacity(file.num_views);
        let mut norm_stats = Vec::with_capacity(file.num_views);
        let mut anchors = Vec::with_capacity(file.num_views);
        for (m, view) in file.views.into_iter().enumerate() {
            let w = view.projection.into_matrix()?;
            if w.shape() != (file.dims[m], file.bits) {
                return Err(Error::Format(format!(
                    "model file: view {m} projection is {:?}, expected {:?}",
                    w.shape(),
                    (file.dims[m], file.bits)
                )));
            }
            if view.norm.mean.len() != file.dims[m] || view.norm.scale.len() != file.dims[m] {
                return Err(Error::Format(format!("model file: view {m} normalization has wrong length")));
            }
            projections.push(StiefelPoint::new(w)?);
            norm_stats.push(view.norm);
            anchors.push(AnchorSet {
                centers: view.anchors.into_matrix()?,
                view_index: m,
            });
        }
        if file.mu.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Format("model file: view weights must be positive".into()));
        }
        Ok(HashModel {
            bits: file.bits,
            projections,
            mu: file.mu,
            norm_stats,
            anchors,
            config: file.config,
        })
    }
}

/// `sgn(Σ_m P_m / μ_m)` with `sgn(0) = +1`, where `P_m = X_m W_m`.
pub(crate) fn weighted_sign(projected: &[DMatrix<f64>], mu: &[f64]) -> CodeMatrix {
    let mut acc = DMatrix::zeros(projected[0].nrows(), projected[0].ncols());
    for (p, &m) in projected.iter().zip(mu) {
        acc += p / m;
    }
    CodeMatrix::sign_of(&acc)
}

pub fn encode(model: &HashModel, features: &[FeatureMatrix]) -> Result<CodeMatrix> {
    if features.len() < model.num_views() {
        return Err(Error::MissingView(format!(
            "model has {} views, got {}",
            model.num_views(),
            features.len()
        )));
    }
    if features.len() > model.num_views() {
        return Err(Error::Shape(format!(
            "model has {} views, got {}",
            model.num_views(),
            features.len()
        )));
    }
    let n = features[0].nrows();
    let mut projected = Vec::with_capacity(features.len());
    for (m, x) in features.iter().enumerate() {
        if x.nrows() != n {
            return Err(Error::Shape(format!("view {m} has {} rows, view 0 has {n}", x.nrows())));
        }
        if x.ncols() != model.projections[m].dim() {
            return Err(Error::Shape(format!(
                "view {m} has {} columns, model expects {}",
                x.ncols(),
                model.projections[m].dim()
            )));
        }
        let normalized = model.norm_stats[m].apply(x)?;
        projected.push(normalized.matrix() * model.projections[m].matrix());
    }
    Ok(weighted_sign(&projected, &model.mu))
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    bits: usize,
    num_views: usize,
    dims: Vec<usize>,
    mu: Vec<f64>,
    views: Vec<ViewRecord>,
    config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    projection: StoredMatrix,
    norm: NormStats,
    anchors: StoredMatrix,
}

/// Row-major matrix as it appears in the model file.
#[derive(Serialize, Deserialize)]
struct StoredMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for StoredMatrix {
    fn from(m: &DMatrix<f64>) -> Self {
        StoredMatrix {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }
}

impl StoredMatrix {
    fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "model file: {}x{} matrix with {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}
