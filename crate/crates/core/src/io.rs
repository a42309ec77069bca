//! File formats: line-delimited datasets, model files and hypothesis sets.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HypothesisSet, ModelFile, RegressorModel, TrainConfig};
use crate::rotation::UnitQuaternion;
use crate::toy::{sample_dataset, DatasetSpec, PinholeCamera, ToyObject, ToySample};

pub const DATASET_VERSION: &str = "toyset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: String,
    pub object: ToyObject,
    pub camera: PinholeCamera,
    pub spec: DatasetSpec,
    pub seed: u64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<ToySample>,
}

impl Dataset {
    pub fn generate(obj: ToyObject, n: usize, camera: PinholeCamera, spec: DatasetSpec, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("dataset size must be positive".into()));
        }
        let samples = sample_dataset(&obj, n, &camera, &spec, seed);
        Ok(Self {
            header: DatasetHeader {
                version: DATASET_VERSION.into(),
                object: obj,
                camera,
                spec,
                seed,
                n,
            },
            samples,
        })
    }

    pub fn write_to(&self, w: impl Write) -> Result<()> {
        let mut w = BufWriter::new(w);
        serde_json::to_writer(&mut w, &self.header).map_err(json_io)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s).map_err(json_io)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(fs::File::create(path)?)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let (_, first) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header line".into(),
        })?;
        let first = first?;
        let raw: serde_json::Value = parse_line(&first, 1)?;
        let version = raw.get("version").and_then(|v| v.as_str()).unwrap_or("");
        if version != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION.into(),
                found: version.into(),
            });
        }
        let header: DatasetHeader = serde_json::from_value(raw).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let mut samples = Vec::with_capacity(header.n);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(parse_line(&line, i + 1)?);
        }
        if samples.len() != header.n {
            return Err(Error::Parse {
                line: samples.len() + 2,
                message: format!("header declares {} samples, found {}", header.n, samples.len()),
            });
        }
        Ok(Self { header, samples })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

fn parse_line<T: serde::de::DeserializeOwned>(line: &str, number: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Parse {
        line: number,
        message: e.to_string(),
    })
}

fn json_io(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

fn parse_document<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &RegressorModel, config: Option<TrainConfig>) -> Result<()> {
    let text = serde_json::to_string(&ModelFile::new(model, config)).map_err(json_io)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RegressorModel> {
    let text = fs::read_to_string(path)?;
    let raw: serde_json::Value = parse_document(&text)?;
    let version = raw.get("version").and_then(|v| v.as_str()).unwrap_or("");
    if version != crate::model::MODEL_VERSION {
        return Err(Error::Version {
            expected: crate::model::MODEL_VERSION.into(),
            found: version.into(),
        });
    }
    let file: ModelFile = parse_document(&text)?;
    file.into_model()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HypothesisDoc {
    Full {
        rotations: Vec<[f64; 4]>,
        #[serde(default)]
        depths: Option<Vec<f64>>,
    },
    Bare(Vec<[f64; 4]>),
}

/// Parses a hypothesis set: either `{"rotations": [[w,x,y,z], ...],
/// "depths": [...]}` or a bare array of quaternions. Missing depths read as 1.
pub fn parse_hypotheses(text: &str) -> Result<HypothesisSet> {
    let doc: HypothesisDoc = parse_document(text)?;
    let (rotations, depths) = match doc {
        HypothesisDoc::Full { rotations, depths } => (rotations, depths),
        HypothesisDoc::Bare(r) => (r, None),
    };
    let quats = rotations
        .into_iter()
        .map(UnitQuaternion::try_from)
        .collect::<Result<Vec<_>>>()?;
    let depths = depths.unwrap_or_else(|| vec![1.0; quats.len()]);
    HypothesisSet::new(quats, depths)
}

pub fn load_hypotheses(path: impl AsRef<Path>) -> Result<HypothesisSet> {
    parse_hypotheses(&fs::read_to_string(path)?)
}
