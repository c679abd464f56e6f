use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use qudit_graybox::dynamics::Dataset;
use qudit_graybox::graybox::{read_checkpoint, GrayboxModel};
use qudit_graybox::{Error, Result};

pub fn manifest_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("manifest.json")
}

pub fn sidecar_path(file: &Path) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Metadata for a CSV output: command, config hash and anything else.
pub fn write_sidecar(file: &Path, command: &str, config_hash: &str, extra: Value) -> Result<()> {
    let mut meta = json!({ "command": command, "config_hash": config_hash });
    if let (Some(m), Value::Object(e)) = (meta.as_object_mut(), extra) {
        m.extend(e);
    }
    write_json(&sidecar_path(file), &meta)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::read(open(path)?, open(&manifest_path(path))?)
}

pub fn read_model(path: &Path) -> Result<(GrayboxModel, Value)> {
    read_checkpoint(open(path)?)
}
