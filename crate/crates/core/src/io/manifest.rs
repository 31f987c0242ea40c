//! Dataset manifests: a JSON file naming the embedding and label files of one
//! split. Relative paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::labels::{encode_labels, read_column};
use super::npy::{load_embeddings, read_header};
use crate::error::{Error, Result};
use crate::labels::LabelVector;

fn default_y() -> String {
    "y".into()
}

fn default_s() -> String {
    "s".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub n: usize,
    pub d: usize,
    /// `n × d` image embeddings.
    pub images: PathBuf,
    /// `c × d` class-prompt embeddings.
    pub class_prompts: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitive_prompts: Option<PathBuf>,
    /// CSV label table with `n` rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default = "default_y")]
    pub y_column: String,
    #[serde(default = "default_s")]
    pub s_column: String,
    /// Explicit class names, in index order, for string-valued label columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_classes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_classes: Option<Vec<String>>,
    /// L2-normalize embedding rows on load.
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Everything a manifest points at, loaded and checked.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Array2<f64>,
    pub class_prompts: Array2<f64>,
    pub sensitive_prompts: Option<Array2<f64>>,
    pub y: Option<LabelVector>,
    pub s: Option<LabelVector>,
}

impl DatasetManifest {
    pub fn new(split: &str, n: usize, d: usize, images: &str, class_prompts: &str) -> Self {
        Self {
            split: split.into(),
            n,
            d,
            images: images.into(),
            class_prompts: class_prompts.into(),
            sensitive_prompts: None,
            labels: None,
            y_column: default_y(),
            s_column: default_s(),
            y_classes: None,
            s_classes: None,
            normalize: true,
            model_id: None,
            base_dir: PathBuf::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks every referenced file against the declared shapes without
    /// loading payloads, and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n == 0 || self.d == 0 {
            problems.push(format!("declared shape {}×{} is empty", self.n, self.d));
        }
        let mut shape_of = |what: &str, p: &Path| -> Option<(usize, usize)> {
            match read_header(&self.resolve(p)) {
                Ok(h) => Some(h.shape),
                Err(e) => {
                    problems.push(format!("{what}: {e}"));
                    None
                }
            }
        };
        let images = shape_of("images", &self.images);
        let prompts = shape_of("class_prompts", &self.class_prompts);
        let sensitive = self
            .sensitive_prompts
            .as_ref()
            .and_then(|p| shape_of("sensitive_prompts", p));
        if let Some((rows, cols)) = images {
            if (rows, cols) != (self.n, self.d) {
                problems.push(format!(
                    "images: file is {rows}×{cols}, manifest declares {}×{}",
                    self.n, self.d
                ));
            }
        }
        for (what, shape) in [("class_prompts", prompts), ("sensitive_prompts", sensitive)] {
            if let Some((rows, cols)) = shape {
                if cols != self.d {
                    problems.push(format!("{what}: width {cols}, manifest declares d = {}", self.d));
                }
                if rows < 2 {
                    problems.push(format!("{what}: needs at least 2 rows, found {rows}"));
                }
            }
        }
        if let Some(p) = &self.labels {
            let path = self.resolve(p);
            for column in [&self.y_column, &self.s_column] {
                match read_column(&path, column) {
                    Ok(cells) if cells.len() != self.n => problems.push(format!(
                        "labels: column '{column}' has {} rows, manifest declares n = {}",
                        cells.len(),
                        self.n
                    )),
                    Ok(_) => {}
                    Err(e) => problems.push(format!("labels: {e}")),
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "manifest for split '{}' is inconsistent:\n  - {}",
                self.split,
                problems.join("\n  - ")
            )))
        }
    }

    /// Validates, then loads everything.
    pub fn load(&self) -> Result<Dataset> {
        self.validate()?;
        let load = |p: &Path| load_embeddings(&self.resolve(p), Some(self.d), self.normalize);
        let images = load(&self.images)?.matrix;
        let class_prompts = load(&self.class_prompts)?.matrix;
        let sensitive_prompts = match &self.sensitive_prompts {
            Some(p) => Some(load(p)?.matrix),
            None => None,
        };
        let (y, s) = match &self.labels {
            Some(p) => {
                let path = self.resolve(p);
                let y = encode_labels(&read_column(&path, &self.y_column)?, self.y_classes.as_deref())?;
                let s = encode_labels(&read_column(&path, &self.s_column)?, self.s_classes.as_deref())?;
                (Some(y), Some(s))
            }
            None => (None, None),
        };
        if let Some(y) = &y {
            if y.num_classes() > class_prompts.nrows() {
                return Err(Error::InvalidInput(format!(
                    "labels use {} target classes but there are {} class prompts",
                    y.num_classes(),
                    class_prompts.nrows()
                )));
            }
        }
        // Pad the class count to the prompt count so unseen classes still index correctly.
        let y = match y {
            Some(y) if y.num_classes() < class_prompts.nrows() => {
                Some(LabelVector::new(y.values().to_vec(), class_prompts.nrows())?)
            }
            other => other,
        };
        Ok(Dataset {
            manifest: self.clone(),
            images,
            class_prompts,
            sensitive_prompts,
            y,
            s,
        })
    }
}
