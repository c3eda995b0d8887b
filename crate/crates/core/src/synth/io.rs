//! Dataset file format.
//!
//! Line-delimited JSON: the first line is a header object describing the
//! generator, every following line is one sample with its split tag and
//! row-major pixels. Floats are written in shortest round-trip form, so a
//! read-back dataset is bit-identical to the generated one.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassSpec, Dataset, DatasetConfig, GeneratorConfig, RoiSample, Split, SplitSizes};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    #[serde(rename = "C")]
    pub n_classes: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
    pub classes: Vec<ClassSpec>,
    pub physics: GeneratorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_physics: Option<GeneratorConfig>,
    #[serde(default)]
    pub test_gain_db: f64,
    pub sizes: SplitSizes,
    pub master_seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    sample_id: u64,
    split: Split,
    class_id: usize,
    range_m: f64,
    provenance_seed: u64,
    pixels: Vec<f64>,
}

pub fn write_dataset(dataset: &Dataset, out: impl Write) -> Result<()> {
    let cfg = &dataset.config;
    let header = DatasetHeader {
        version: FORMAT_VERSION,
        n_classes: cfg.n_classes(),
        height: cfg.physics.height,
        width: cfg.physics.width,
        classes: cfg.classes.clone(),
        physics: cfg.physics.clone(),
        test_physics: cfg.test_physics.clone(),
        test_gain_db: cfg.test_gain_db,
        sizes: cfg.sizes,
        master_seed: cfg.master_seed,
    };
    let mut out = BufWriter::new(out);
    let io_err = |e| Error::io("<dataset stream>", e);
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::json("dataset header", e))?;
    out.write_all(b"\n").map_err(io_err)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        for s in dataset.split(split) {
            let rec = SampleRecord {
                sample_id: s.sample_id,
                split,
                class_id: s.class_id,
                range_m: s.range_m,
                provenance_seed: s.provenance_seed,
                pixels: s.pixels.clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::json("dataset sample", e))?;
            out.write_all(b"\n").map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(dataset, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_dataset(input: impl BufRead, origin: &Path) -> Result<Dataset> {
    let malformed = |message: String| Error::Format {
        path: origin.to_path_buf(),
        message,
    };
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(origin, e))?,
        None => return Err(malformed("empty file".into())),
    };
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| malformed(format!("line 1: bad header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported version {}", header.version)));
    }
    let config = DatasetConfig {
        classes: header.classes,
        physics: header.physics,
        sizes: header.sizes,
        master_seed: header.master_seed,
        test_physics: header.test_physics,
        test_gain_db: header.test_gain_db,
    };
    config
        .validate("header")
        .map_err(|e| malformed(e.to_string()))?;
    if config.n_classes() != header.n_classes
        || config.physics.height != header.height
        || config.physics.width != header.width
    {
        return Err(malformed(
            "header C/H/W disagree with class specs or physics".into(),
        ));
    }

    let mut dataset = Dataset {
        config,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (i, line) in lines {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord =
            serde_json::from_str(&line).map_err(|e| malformed(format!("line {}: {e}", i + 1)))?;
        let sample = RoiSample {
            sample_id: rec.sample_id,
            class_id: rec.class_id,
            range_m: rec.range_m,
            provenance_seed: rec.provenance_seed,
            height: header.height,
            width: header.width,
            pixels: rec.pixels,
        };
        sample
            .validate(header.n_classes)
            .map_err(|e| malformed(format!("line {}: {e}", i + 1)))?;
        match rec.split {
            Split::Train => dataset.train.push(sample),
            Split::Val => dataset.val.push(sample),
            Split::Test => dataset.test.push(sample),
        }
    }
    let sizes = dataset.config.sizes;
    if dataset.train.len() != sizes.train
        || dataset.val.len() != sizes.val
        || dataset.test.len() != sizes.test
    {
        return Err(malformed(format!(
            "split sizes {}/{}/{} do not match header {}/{}/{}",
            dataset.train.len(),
            dataset.val.len(),
            dataset.test.len(),
            sizes.train,
            sizes.val,
            sizes.test
        )));
    }
    Ok(dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path)
}
