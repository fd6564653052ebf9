//! Inference: load a checkpoint, push images through the network at the
//! training resolution, and write saliency maps back at each image's
//! original size.

use std::path::{Path, PathBuf};

use jaffnet_core::data::{normalize, resize_bilinear};
use jaffnet_core::model::JaffNet;

use crate::checkpoint::{self, LoadedCheckpoint};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pngio;

/// Network input side length during inference.
const INFER_SIZE: usize = 256;

/// Builds the model a checkpoint describes and fills in its weights.
pub fn model_from_checkpoint(loaded: &LoadedCheckpoint) -> Result<JaffNet<f32>> {
    let mut model = JaffNet::new(&loaded.config.network(), 0)?;
    checkpoint::apply(&mut model, loaded)?;
    Ok(model)
}

/// Runs inference on each input PNG and writes `<out>/<stem>.png` saliency
/// maps. When a run configuration is supplied, its architecture must match
/// the checkpoint's.
pub fn cmd_infer(
    ckpt: &Path,
    config: Option<&RunConfig>,
    inputs: &[PathBuf],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(CliError::Config("no input images given".into()));
    }
    let loaded = checkpoint::load(ckpt)?;
    if let Some(cfg) = config {
        let mismatches = cfg.network_mismatches(&loaded.config);
        if !mismatches.is_empty() {
            return Err(CliError::Checkpoint(format!(
                "checkpoint architecture differs from the config in: {}",
                mismatches.join(", ")
            )));
        }
    }
    let model = model_from_checkpoint(&loaded)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut written = Vec::with_capacity(inputs.len());
    for input in inputs {
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::Data(format!("cannot derive a name from {}", input.display())))?;
        let raw = pngio::tensor_from_gray(&pngio::load_gray(input)?);
        let [_, _, h, w] = raw.shape();
        let net_in = normalize(&resize_bilinear(&raw, INFER_SIZE, INFER_SIZE));
        let output = model.forward_eval(&net_in)?;
        let map = resize_bilinear(&output.final_map, h, w);
        let out_path = out_dir.join(format!("{stem}.png"));
        pngio::save_gray(&out_path, &pngio::gray_from_tensor(&map)?)?;
        written.push(out_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use jaffnet_core::Tensor;

    fn saved_model(dir: &Path) -> PathBuf {
        let mut run = RunConfig::default();
        run.base_width = 4;
        run.decoder_widths = [16, 8, 4, 4];
        let model = JaffNet::<f32>::new(&run.network(), 13).unwrap();
        let path = dir.join("model.ckpt");
        checkpoint::save(&path, &run, &model, None, 0).unwrap();
        path
    }

    fn write_input(path: &Path, h: usize, w: usize) {
        let t = Tensor::<f32>::from_fn([1, 1, h, w], |_, _, y, x| {
            (((y * 7 + x * 3) % 200) as f32) / 255.0
        });
        pngio::save_gray(path, &pngio::gray_from_tensor(&t).unwrap()).unwrap();
    }

    #[test]
    fn maps_come_back_at_the_original_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = saved_model(dir.path());
        let input = dir.path().join("part_200x200.png");
        write_input(&input, 200, 200);
        let out = dir.path().join("maps");

        let written = cmd_infer(&ckpt, None, &[input], &out).unwrap();
        assert_eq!(written.len(), 1);
        let map = pngio::load_gray(&written[0]).unwrap();
        assert_eq!(map.dimensions(), (200, 200));
    }

    #[test]
    fn inference_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = saved_model(dir.path());
        let input = dir.path().join("sample.png");
        write_input(&input, 48, 64);

        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let first = cmd_infer(&ckpt, None, std::slice::from_ref(&input), &out_a).unwrap();
        let second = cmd_infer(&ckpt, None, std::slice::from_ref(&input), &out_b).unwrap();
        assert_eq!(std::fs::read(&first[0]).unwrap(), std::fs::read(&second[0]).unwrap());
    }

    #[test]
    fn config_architecture_mismatch_names_the_fields() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = saved_model(dir.path());
        let input = dir.path().join("sample.png");
        write_input(&input, 32, 32);

        let mut other = RunConfig::default();
        other.base_width = 8;
        other.use_drf = false;
        let err =
            cmd_infer(&ckpt, Some(&other), &[input], &dir.path().join("out")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("base_width"), "{err}");
        assert!(err.to_string().contains("use_drf"), "{err}");

        // Matching architecture fields pass even when training fields differ.
        let mut same = RunConfig::default();
        same.base_width = 4;
        same.decoder_widths = [16, 8, 4, 4];
        same.learning_rate = 0.5;
        let out = dir.path().join("ok");
        let input2 = dir.path().join("sample2.png");
        write_input(&input2, 32, 32);
        cmd_infer(&ckpt, Some(&same), &[input2], &out).unwrap();
    }

    #[test]
    fn missing_inputs_and_bad_checkpoints_error_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = saved_model(dir.path());
        let err = cmd_infer(&ckpt, None, &[], &dir.path().join("out")).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let err = cmd_infer(
            &dir.path().join("missing.ckpt"),
            None,
            &[dir.path().join("x.png")],
            &dir.path().join("out"),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }
}
