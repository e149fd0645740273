//! Split datasets and their on-disk form.
//!
//! A dataset directory holds `manifest.json`, `params.json` and one JSON
//! Lines file per split. Each line is one sequence:
//! `{"steps":[{"x":[..],"A":[..],"B_prev":[..]},..],"y":±1,"truth":[{"s":[..],"v":[..],"z":[..]},..]}`.
//! Floats are written in scientific notation with 17 significant digits so
//! every value reads back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{Dims, ScmParams};
use super::population::PopulationSpec;
use super::simulate::{sample_split, Split};
use crate::error::{Error, Result};
use crate::types::{ObservationKind, SequenceSample};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPopulations {
    pub train: PopulationSpec,
    pub val: PopulationSpec,
    pub test: PopulationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHashes {
    pub train: String,
    pub val: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub dims: Dims,
    pub observation: ObservationKind,
    pub counts: SplitCounts,
    pub seed: u64,
    pub params_hash: String,
    pub split_hashes: SplitHashes,
    pub populations: SplitPopulations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    pub params: ScmParams,
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

impl DatasetBundle {
    pub fn split(&self, split: Split) -> &[SequenceSample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn population(&self, split: Split) -> &PopulationSpec {
        let p = &self.manifest.populations;
        match split {
            Split::Train => &p.train,
            Split::Val => &p.val,
            Split::Test => &p.test,
        }
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical bytes of the generator parameters.
pub fn params_bytes(params: &ScmParams) -> Vec<u8> {
    serde_json::to_vec(params).expect("parameters serialise")
}

pub fn params_hash(params: &ScmParams) -> String {
    sha256_hex(&params_bytes(params))
}

/// Draws train and validation sets from the base population and the test
/// set from `shift`. `n_test` may be zero.
pub fn sample_dataset(
    params: &ScmParams,
    counts: SplitCounts,
    shift: &PopulationSpec,
) -> Result<DatasetBundle> {
    params.validate()?;
    shift.validate()?;
    if counts.train == 0 || counts.val == 0 {
        return Err(Error::Precondition(
            "train and validation splits need at least one sequence".into(),
        ));
    }
    if shift.d_b() != params.dims.d_b {
        return Err(Error::Contract(
            "shifted population attribute count differs from d_B".into(),
        ));
    }
    let base = &params.base_population;
    let train = sample_split(params, base, Split::Train, counts.train)?;
    let val = sample_split(params, base, Split::Val, counts.val)?;
    let test = sample_split(params, shift, Split::Test, counts.test)?;
    let split_hashes = SplitHashes {
        train: sha256_hex(encode_split(&train).as_bytes()),
        val: sha256_hex(encode_split(&val).as_bytes()),
        test: sha256_hex(encode_split(&test).as_bytes()),
    };
    let manifest = Manifest {
        schema_version: DATASET_SCHEMA_VERSION,
        dims: params.dims,
        observation: params.observation,
        counts,
        seed: params.seed,
        params_hash: params_hash(params),
        split_hashes,
        populations: SplitPopulations {
            train: base.clone(),
            val: base.clone(),
            test: shift.clone(),
        },
    };
    Ok(DatasetBundle {
        manifest,
        params: params.clone(),
        train,
        val,
        test,
    })
}

fn push_f64(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("write to string");
}

fn push_vec(out: &mut String, xs: &[f64]) {
    out.push('[');
    for (i, &x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        push_f64(out, x);
    }
    out.push(']');
}

/// One JSON line per sequence.
pub fn encode_record(sample: &SequenceSample) -> String {
    let mut out = String::from("{\"steps\":[");
    for (i, st) in sample.steps.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str("{\"x\":");
        push_vec(&mut out, &st.x);
        out.push_str(",\"A\":");
        push_vec(&mut out, &st.a);
        out.push_str(",\"B_prev\":");
        push_vec(&mut out, &st.b_prev);
        out.push('}');
    }
    write!(out, "],\"y\":{}", sample.y.signed()).expect("write to string");
    if let Some(truth) = &sample.truth {
        out.push_str(",\"truth\":[");
        for (i, h) in truth.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("{\"s\":");
            push_vec(&mut out, &h.s);
            out.push_str(",\"v\":");
            push_vec(&mut out, &h.v);
            out.push_str(",\"z\":");
            push_vec(&mut out, &h.z);
            out.push('}');
        }
        out.push(']');
    }
    out.push('}');
    out
}

fn encode_split(samples: &[SequenceSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&encode_record(s));
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the bundle into `dir`, creating it if needed.
pub fn write_dataset(bundle: &DatasetBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for split in Split::ALL {
        write_file(
            &dir.join(format!("{}.jsonl", split.name())),
            encode_split(bundle.split(split)).as_bytes(),
        )?;
    }
    write_file(&dir.join("params.json"), &params_bytes(&bundle.params))?;
    let mut manifest = serde_json::to_vec_pretty(&bundle.manifest)?;
    manifest.push(b'\n');
    write_file(&dir.join("manifest.json"), &manifest)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            Error::CorruptDataset(format!("missing file {}", path.display()))
        }
        _ => Error::io(path, e),
    })
}

/// Reads and verifies a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<DatasetBundle> {
    let raw = read_file(&dir.join("manifest.json"))?;
    let value: serde_json::Value = serde_json::from_slice(&raw)
        .map_err(|e| Error::CorruptDataset(format!("manifest.json: {e}")))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::CorruptDataset("manifest.json lacks schema_version".into()))?;
    if found != DATASET_SCHEMA_VERSION as u64 {
        return Err(Error::Version {
            what: "dataset schema",
            found: found as u32,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(value)
        .map_err(|e| Error::CorruptDataset(format!("manifest.json: {e}")))?;

    let params_raw = read_file(&dir.join("params.json"))?;
    if sha256_hex(&params_raw) != manifest.params_hash {
        return Err(Error::CorruptDataset(
            "params.json does not match the manifest hash".into(),
        ));
    }
    let params: ScmParams = serde_json::from_slice(&params_raw)
        .map_err(|e| Error::CorruptDataset(format!("params.json: {e}")))?;

    let d = manifest.dims;
    let mut splits = Vec::with_capacity(3);
    for (split, expect_hash, count) in [
        (
            Split::Train,
            &manifest.split_hashes.train,
            manifest.counts.train,
        ),
        (Split::Val, &manifest.split_hashes.val, manifest.counts.val),
        (
            Split::Test,
            &manifest.split_hashes.test,
            manifest.counts.test,
        ),
    ] {
        let path = dir.join(format!("{}.jsonl", split.name()));
        let bytes = read_file(&path)?;
        if &sha256_hex(&bytes) != expect_hash {
            return Err(Error::CorruptDataset(format!(
                "{} does not match the manifest hash",
                path.display()
            )));
        }
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| Error::CorruptDataset(format!("{}: not UTF-8", path.display())))?;
        let mut samples = Vec::with_capacity(count);
        for (line_no, line) in text.lines().enumerate() {
            let s: SequenceSample = serde_json::from_str(line).map_err(|e| {
                Error::CorruptDataset(format!("{} line {}: {e}", path.display(), line_no + 1))
            })?;
            s.validate(d.steps(), d.d_x, d.d_a, d.d_b).map_err(|e| {
                Error::CorruptDataset(format!("{} line {}: {e}", path.display(), line_no + 1))
            })?;
            samples.push(s);
        }
        if samples.len() != count {
            return Err(Error::CorruptDataset(format!(
                "{} has {} records, manifest says {count}",
                path.display(),
                samples.len()
            )));
        }
        splits.push(samples);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(DatasetBundle {
        manifest,
        params,
        train,
        val,
        test,
    })
}
