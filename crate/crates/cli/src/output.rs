//! Output files. Every command computes first and writes afterwards, so a
//! failed run leaves no partial outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Files waiting to be written into one directory.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Outputs { dir: dir.into(), files: Vec::new() }
    }

    pub fn add(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> beamseries::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf).with_context(|| format!("formatting {name}"))?;
        self.files.push((name.to_string(), buf));
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.add(name, |buf| beamseries::io::write_json(value, buf))
    }

    /// Rows serialized with the csv crate under the header of `T`.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        self.add(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    pub fn text(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    pub fn commit(self) -> Result<()> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        for (name, bytes) in &self.files {
            write_file(&self.dir.join(name), bytes)?;
            eprintln!("wrote {}", self.dir.join(name).display());
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}
