//! Run-directory files: JSON documents, `records.csv`, `params.bin`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::encoder::{EncoderSpec, Params, TrainRecord};
use crate::error::{Error, Result};

use super::elft;

pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const PARAMS_FILE: &str = "params.bin";
pub const BREAKDOWN_FILE: &str = "breakdown.json";
pub const BAND_FILE: &str = "band.json";
pub const TIMING_FILE: &str = "timing.json";

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_records(path: impl AsRef<Path>, records: &[TrainRecord], blocks: usize) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TrainRecord::csv_header(blocks)).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record(r.csv_row()).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads records back; the block count comes from the `l_b*` columns.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrainRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let blocks = header.iter().filter(|h| h.starts_with("l_b")).count();
    r.records()
        .map(|row| {
            let row = row.map_err(|e| csv_err(path, e))?;
            let fields: Vec<String> = row.iter().map(str::to_string).collect();
            TrainRecord::from_csv_row(&fields, blocks)
        })
        .collect()
}

pub fn write_params(path: impl AsRef<Path>, params: &Params) -> Result<()> {
    elft::elft_write_all(params.tensors(), path)
}

pub fn read_params(path: impl AsRef<Path>, spec: &EncoderSpec) -> Result<Params> {
    Params::from_tensors(spec, elft::elft_read_all(path)?)
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self(path.into())
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.0).map_err(|e| Error::io(&self.0, e))
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}
