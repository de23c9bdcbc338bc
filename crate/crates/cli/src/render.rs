//! Slice overlays: truth-only pixels green, detection-only blue, pixels in
//! both red, everything else the grayscale EM.

use std::path::Path;

use anyhow::{Context, Result};
use image::{ImageFormat, Rgb, RgbImage};
use vesicle_core::fusion::ObjectSet;
use vesicle_core::{Error, Volume};

pub const TRUTH_ONLY: Rgb<u8> = Rgb([0, 255, 0]);
pub const DETECTION_ONLY: Rgb<u8> = Rgb([0, 0, 255]);
pub const BOTH: Rgb<u8> = Rgb([255, 0, 0]);

fn slice_membership(set: Option<&ObjectSet>, em: &Volume<u8>, z: usize) -> Result<Vec<bool>> {
    let d = em.dims();
    let mut inside = vec![false; d.slice_len()];
    let Some(set) = set else { return Ok(inside) };
    if set.dims() != d {
        return Err(Error::Parameter(format!("object grid {} differs from EM grid {d}", set.dims())).into());
    }
    let (lo, hi) = (z * d.slice_len(), (z + 1) * d.slice_len());
    for o in set.objects() {
        for &v in o.voxels.iter().filter(|&&v| (lo..hi).contains(&v)) {
            inside[v - lo] = true;
        }
    }
    Ok(inside)
}

/// Overlay image of slice `z`.
pub fn render_overlay(em: &Volume<u8>, detected: Option<&ObjectSet>, truth: Option<&ObjectSet>, z: usize) -> Result<RgbImage> {
    let d = em.dims();
    if z >= d.nz {
        return Err(Error::Parameter(format!("slice {z} out of range for {} slices", d.nz)).into());
    }
    let det = slice_membership(detected, em, z)?;
    let tru = slice_membership(truth, em, z)?;
    let gray = em.slice(z);
    let mut img = RgbImage::new(d.nx as u32, d.ny as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        *px = match (tru[i], det[i]) {
            (true, true) => BOTH,
            (true, false) => TRUTH_ONLY,
            (false, true) => DETECTION_ONLY,
            (false, false) => Rgb([gray[i]; 3]),
        };
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).context("encoding PNG")?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    vesicle_core::atomic::write_bytes_atomic(path, &encode_png(img)?)?;
    Ok(())
}
