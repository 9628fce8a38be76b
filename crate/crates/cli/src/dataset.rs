//! On-disk dataset layout written by `simulate` and read by `train`.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/sample_0000/manifest.json
//! <dir>/sample_0000/{volume,clean,boundaries,clean_boundaries,vessels,gt_z,gt_x}.omv
//! ```

use std::path::{Path, PathBuf};

use moco_core::container::{
    load_boundaries, load_vessels, load_volume, save_boundaries, save_vessels, save_volume,
    save_x_vec, save_z_map,
};
use moco_core::simulate::{generate_phantom, inject_motion, sample_motion};
use moco_core::train::CleanSample;
use moco_core::{MotionConfig, PhantomConfig, VesselKind};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub count: usize,
    pub seed: u64,
    pub z_norm: f64,
    pub x_norm: f64,
    pub phantom: PhantomConfig,
    pub motion: MotionConfig,
    pub splits: Splits,
}

/// Per-sample file table; paths are relative to the sample directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub seed: u64,
    pub motion_seed: u64,
    pub height: usize,
    pub z_norm: f64,
    pub x_norm: f64,
    /// Motion-corrupted volume.
    pub volume: String,
    pub clean: String,
    /// Surfaces of the corrupted volume.
    pub boundaries: String,
    pub clean_boundaries: String,
    pub vessels: String,
    pub gt_z: String,
    pub gt_x: String,
}

impl SampleManifest {
    pub fn read(path: &Path) -> anyhow::Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", file.display())))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("malformed sample manifest {}: {e}", file.display())))?;
        let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, dir))
    }

    pub fn clean_sample(&self, dir: &Path) -> anyhow::Result<CleanSample> {
        Ok(CleanSample {
            volume: load_volume(dir.join(&self.clean))?,
            boundaries: load_boundaries(dir.join(&self.clean_boundaries), self.height)?,
            vessels: load_vessels(dir.join(&self.vessels), VesselKind::Binary)?,
        })
    }
}

/// Split sizes proportional to `ratio`, remainder to the test split.
pub fn split_sizes(count: usize, ratio: [usize; 3]) -> [usize; 3] {
    let total: usize = ratio.iter().sum();
    let train = (count * ratio[0] + total / 2) / total;
    let val = ((count * ratio[1] + total / 2) / total).min(count - train);
    [train, val, count - train - val]
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub struct SimulateArgs<'a> {
    pub out: &'a Path,
    pub count: usize,
    pub seed: u64,
    pub phantom: &'a PhantomConfig,
    pub motion: &'a MotionConfig,
    pub z_norm: f64,
    pub x_norm: f64,
    pub split: [usize; 3],
}

pub fn simulate(a: &SimulateArgs<'_>) -> anyhow::Result<DatasetManifest> {
    std::fs::create_dir_all(a.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", a.out.display())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut names = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let name = format!("sample_{i:04}");
        let dir = a.out.join(&name);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let (seed, motion_seed) = (rng.next_u64(), rng.next_u64());
        let phantom = generate_phantom(&PhantomConfig { seed, ..a.phantom.clone() })?;
        let (h, w, n) = phantom.volume.dims();
        let motion = sample_motion(motion_seed, w, n, a.motion)?;
        let inj = inject_motion(&phantom.volume, &phantom.boundaries, &motion, a.z_norm, a.x_norm)?;
        let m = SampleManifest {
            seed,
            motion_seed,
            height: h,
            z_norm: a.z_norm,
            x_norm: a.x_norm,
            volume: "volume.omv".into(),
            clean: "clean.omv".into(),
            boundaries: "boundaries.omv".into(),
            clean_boundaries: "clean_boundaries.omv".into(),
            vessels: "vessels.omv".into(),
            gt_z: "gt_z.omv".into(),
            gt_x: "gt_x.omv".into(),
        };
        save_volume(dir.join(&m.volume), &inj.volume)?;
        save_volume(dir.join(&m.clean), &phantom.volume)?;
        save_boundaries(dir.join(&m.boundaries), &inj.boundaries)?;
        save_boundaries(dir.join(&m.clean_boundaries), &phantom.boundaries)?;
        save_vessels(dir.join(&m.vessels), &phantom.vessels)?;
        save_z_map(dir.join(&m.gt_z), &inj.gt_z)?;
        save_x_vec(dir.join(&m.gt_x), &inj.gt_x)?;
        write_json(&dir.join(MANIFEST), &m)?;
        names.push(name);
    }
    let [tr, va, _] = split_sizes(a.count, a.split);
    let test = names.split_off(tr + va);
    let val = names.split_off(tr);
    let manifest = DatasetManifest {
        count: a.count,
        seed: a.seed,
        z_norm: a.z_norm,
        x_norm: a.x_norm,
        phantom: a.phantom.clone(),
        motion: *a.motion,
        splits: Splits { train: names, val, test },
    };
    write_json(&a.out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<DatasetManifest> {
    let file = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&file)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", file.display())))?;
    Ok(serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("malformed dataset manifest {}: {e}", file.display())))?)
}

pub fn load_split(dir: &Path, names: &[String]) -> anyhow::Result<Vec<CleanSample>> {
    names
        .iter()
        .map(|name| {
            let (m, sdir) = SampleManifest::read(&dir.join(name))?;
            m.clean_sample(&sdir)
        })
        .collect()
}
