//! Shared command plumbing: atomic writes and frame discovery.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::CliResult;

/// Write via a temp file in the target directory plus rename, so consumers
/// never observe partial files.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or(Path::new(".")))
        .context("creating temp file")?;
    tmp.write_all(bytes).context("writing temp file")?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Render a BEV to PNG atomically (the encoder infers the format from the
/// extension, so the temp file keeps a .png suffix).
pub fn render_png_atomic(bev: &bevkit::BevImage, path: &Path) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let tmp = tempfile::Builder::new()
        .suffix(".png")
        .tempfile_in(dir.unwrap_or(Path::new(".")))
        .context("creating temp png")?;
    bevkit::bev::render_png(bev, tmp.path())?;
    tmp.persist(path)
        .with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Sorted list of `.bin` frames in a directory.
pub fn list_bin_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "bin"))
        .collect();
    frames.sort();
    Ok(frames)
}

pub fn frame_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
