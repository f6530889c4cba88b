use std::io::Write;
use std::path::{Path, PathBuf};

use dsglight::panorama::{hdr, pfm};
use dsglight::Panorama;
use serde::Serialize;

use crate::{failed, input_err, CliError, CliResult};

/// Writes via a temporary file in the target directory, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| failed(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(failed)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

pub fn read_panorama(path: &Path) -> CliResult<Panorama> {
    if !path.is_file() {
        return Err(CliError::Input(format!("{}: no such file", path.display())));
    }
    match extension(path).as_str() {
        "hdr" | "pic" => hdr::read(path).map_err(input_err(path)),
        "pfm" => pfm::read(path).map_err(input_err(path)),
        other => Err(CliError::Input(format!(
            "{}: unsupported extension `{other}`",
            path.display()
        ))),
    }
}

/// Encodes by extension: `.pfm` keeps full float precision, anything else is Radiance HDR.
pub fn encode_panorama(path: &Path, pano: &Panorama) -> CliResult<Vec<u8>> {
    if extension(path) == "pfm" {
        Ok(pfm::encode(pano))
    } else {
        hdr::encode(pano).map_err(failed)
    }
}

pub fn read_light(path: &Path) -> CliResult<dsglight::DsgLight> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    dsglight::DsgLight::from_json_str(&text).map_err(input_err(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// `out.json` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Output files staged in memory and committed together once every one is ready.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_path_buf(), bytes));
    }

    pub fn add_json<S: Serialize>(&mut self, path: &Path, value: &S) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(failed)?;
        text.push('\n');
        self.add(path, text.into_bytes());
        Ok(())
    }

    pub fn commit(self) -> CliResult<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.files.len());
        for (path, bytes) in self.files {
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}
