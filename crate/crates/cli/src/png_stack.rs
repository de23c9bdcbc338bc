//! Directory of grayscale PNG slices to a u8 volume.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use vesicle_core::{Dims, Resolution, Volume};

/// PNG files in `dir`, sorted by file name.
pub fn slice_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Stacks the slices in name order. Colour images are converted to luma;
/// all slices must share one size.
pub fn import_png_stack(dir: &Path, resolution: Resolution) -> Result<Volume<u8>> {
    let paths = slice_paths(dir)?;
    if paths.is_empty() {
        bail!("{}: no PNG files", dir.display());
    }
    let mut data = Vec::new();
    let mut size = None;
    for path in &paths {
        let img = image::open(path).with_context(|| format!("decoding {}", path.display()))?.into_luma8();
        let dims = img.dimensions();
        match size {
            None => size = Some(dims),
            Some(s) if s != dims => bail!(
                "{}: slice is {}x{}, expected {}x{}",
                path.display(),
                dims.0,
                dims.1,
                s.0,
                s.1
            ),
            _ => {}
        }
        data.extend_from_slice(img.as_raw());
    }
    let (w, h) = size.expect("at least one slice");
    Ok(Volume::from_vec(Dims::new(w as usize, h as usize, paths.len()), resolution, data)?)
}
