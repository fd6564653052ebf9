//! Dataset directory layout: `images/*.png` plus `masks/*.png` with matching
//! stems, and a synthetic-dataset writer emitting that layout plus a
//! manifest of generator parameters.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use jaffnet_core::data::{
    binarize_gt, synth_generate, BackgroundKind, DefectKind, Sample, SynthSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::pngio;

/// A scanned dataset: sorted stems with an image and a mask each.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    stems: Vec<String>,
}

/// Sorted stems of the `.png` files directly inside `dir`.
pub fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
    let mut stems = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Data(format!("cannot list {}: {e}", dir.display())))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

impl Dataset {
    /// Scans `root/images` and `root/masks`, requiring a mask for every
    /// image and at least one pair.
    pub fn scan(root: &Path) -> Result<Dataset> {
        let images = root.join("images");
        let masks = root.join("masks");
        let stems = png_stems(&images)?;
        if stems.is_empty() {
            return Err(CliError::Data(format!(
                "no training images found under {}",
                images.display()
            )));
        }
        for stem in &stems {
            let mask = masks.join(format!("{stem}.png"));
            if !mask.is_file() {
                return Err(CliError::Data(format!("image {stem}.png has no mask {}", mask.display())));
            }
        }
        Ok(Dataset { root: root.to_path_buf(), stems })
    }

    pub fn len(&self) -> usize {
        self.stems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stems.is_empty()
    }

    pub fn stems(&self) -> &[String] {
        &self.stems
    }

    /// Loads one pair as raw gray values in `[0, 1]` plus a binarized mask.
    pub fn load(&self, index: usize) -> Result<Sample<f32>> {
        let stem = &self.stems[index];
        let image_path = self.root.join("images").join(format!("{stem}.png"));
        let mask_path = self.root.join("masks").join(format!("{stem}.png"));
        let image = pngio::tensor_from_gray(&pngio::load_gray(&image_path)?);
        let mask_gray = pngio::tensor_from_gray(&pngio::load_gray(&mask_path)?);
        let mask = binarize_gt(&mask_gray)
            .map_err(|e| CliError::Data(format!("mask {stem}.png: {e}")))?;
        Sample::new(image, mask)
            .map_err(|e| CliError::Data(format!("pair {stem}.png: {e}")))
    }
}

/// How `cmd_synth` picks per-sample generator parameters.
pub struct SynthArgs {
    pub count: usize,
    pub image_size: usize,
    /// Fixed kind, or `None` to cycle scratch/patch/inclusion.
    pub kind: Option<DefectKind>,
    /// Fixed background, or `None` to cycle flat/grating/blobs.
    pub background: Option<BackgroundKind>,
    /// Fixed contrast, or `None` to draw from `[0.3, 1.0)` per sample.
    pub contrast: Option<f64>,
    pub noise_rho: f64,
    pub seed: u64,
}

const MIXED_KINDS: [DefectKind; 3] = [DefectKind::Scratch, DefectKind::Patch, DefectKind::Inclusion];
const MIXED_BACKGROUNDS: [BackgroundKind; 3] =
    [BackgroundKind::Flat, BackgroundKind::Grating, BackgroundKind::Blobs];

/// Writes `count` image/mask pairs plus `manifest.csv`, one generator spec
/// per line. Reruns with identical arguments produce identical bytes.
pub fn write_synth(out: &Path, args: &SynthArgs) -> Result<Vec<SynthSpec>> {
    if args.count == 0 {
        return Err(CliError::Config("sample count must be at least 1".into()));
    }
    let images_dir = out.join("images");
    let masks_dir = out.join("masks");
    fs::create_dir_all(&images_dir)
        .and_then(|_| fs::create_dir_all(&masks_dir))
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;

    let mut contrast_rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0xc0de_5eed_0000_0001);
    let mut specs = Vec::with_capacity(args.count);
    let mut manifest = String::from("stem,image_size,defect_kind,background,contrast,noise_rho,seed\n");
    for i in 0..args.count {
        let drawn_contrast = 0.3 + 0.7 * contrast_rng.random::<f64>();
        let spec = SynthSpec {
            image_size: args.image_size,
            defect_kind: args.kind.unwrap_or(MIXED_KINDS[i % MIXED_KINDS.len()]),
            contrast: args.contrast.unwrap_or(drawn_contrast),
            background: args
                .background
                .unwrap_or(MIXED_BACKGROUNDS[(i / MIXED_KINDS.len()) % MIXED_BACKGROUNDS.len()]),
            noise_rho: args.noise_rho,
            seed: args.seed.wrapping_add(i as u64),
        };
        let sample: Sample<f32> = synth_generate(&spec)?;
        let stem = format!("{i:05}");
        pngio::save_gray(
            &images_dir.join(format!("{stem}.png")),
            &pngio::gray_from_tensor(&sample.image)?,
        )?;
        let size = args.image_size;
        let mask = jaffnet_core::Tensor::<f32>::from_fn([1, 1, size, size], |_, _, y, x| {
            if sample.mask.values()[y * size + x] {
                1.0
            } else {
                0.0
            }
        });
        pngio::save_gray(&masks_dir.join(format!("{stem}.png")), &pngio::gray_from_tensor(&mask)?)?;
        manifest.push_str(&format!(
            "{stem},{},{},{},{:?},{:?},{}\n",
            spec.image_size, spec.defect_kind, spec.background, spec.contrast, spec.noise_rho, spec.seed
        ));
        specs.push(spec);
    }
    let manifest_path = out.join("manifest.csv");
    let mut file = fs::File::create(&manifest_path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", manifest_path.display())))?;
    file.write_all(manifest.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", manifest_path.display())))?;
    Ok(specs)
}
