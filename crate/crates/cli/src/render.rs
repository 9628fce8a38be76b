use std::path::Path;

use image::GrayImage;
use moco_core::Volume;

use crate::CliError;

/// Min-max normalizes `values` and applies display gamma `v^(1/gamma)`.
pub fn gamma_image(values: &[f64], width: usize, height: usize, gamma: f64) -> GrayImage {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels = values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0).powf(1.0 / gamma) * 255.0).round() as u8)
        .collect();
    GrayImage::from_raw(width as u32, height as u32, pixels).expect("buffer matches dims")
}

fn save(img: &GrayImage, path: &Path) -> anyhow::Result<()> {
    img.save(path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Writes the central B-scan, central cross-section and en-face projection as
/// `<prefix>_bscan.png`, `<prefix>_cross.png` and `<prefix>_enface.png`.
pub fn render_volume(v: &Volume, dir: &Path, prefix: &str, gamma: f64) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let (h, w, n) = v.dims();
    let to64 = |s: Vec<f32>| s.into_iter().map(f64::from).collect::<Vec<_>>();
    save(&gamma_image(&to64(v.bscan(n / 2)), w, h, gamma), &dir.join(format!("{prefix}_bscan.png")))?;
    save(&gamma_image(&to64(v.cross_section(w / 2)), n, h, gamma), &dir.join(format!("{prefix}_cross.png")))?;
    save(&gamma_image(&v.enface_projection(), w, n, gamma), &dir.join(format!("{prefix}_enface.png")))?;
    Ok(())
}
