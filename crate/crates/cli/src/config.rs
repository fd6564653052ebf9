//! Run configuration: flat `key=value` files, named presets, and a stable
//! content hash that ties checkpoints to the settings that produced them.

use std::fmt;
use std::path::Path;

use jaffnet_core::encoder::NetworkConfig;
use jaffnet_core::loss::{LossConfig, SsimConfig};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Geometry augmentation applied by the training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    /// Resize to 256, random 224 crop, random flips.
    Paper,
    /// Random flips only, keeping the native resolution.
    Flip,
    /// No augmentation.
    None,
}

impl Augment {
    fn as_str(self) -> &'static str {
        match self {
            Augment::Paper => "paper",
            Augment::Flip => "flip",
            Augment::None => "none",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Augment::Paper),
            "flip" => Ok(Augment::Flip),
            "none" => Ok(Augment::None),
            other => Err(CliError::Config(format!("unknown augment mode {other:?}"))),
        }
    }
}

impl fmt::Display for Augment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a training or inference run depends on. The network fields
/// mirror [`NetworkConfig`]; the rest drive the optimizer, the loss and the
/// training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub base_width: usize,
    pub input_channels: usize,
    pub mrf_rates: [usize; 3],
    pub num_side_outputs: usize,
    pub decoder_widths: [usize; 4],
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub use_jaff: bool,
    pub use_drf: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// When set, the step budget becomes `epochs * ceil(n / batch_size)`.
    pub epochs: Option<u64>,
    /// Step budget used when `epochs` is unset.
    pub steps: u64,
    pub seed: u64,
    pub use_bce: bool,
    pub use_iou: bool,
    pub use_ssim: bool,
    pub deep_supervision: bool,
    pub augment: Augment,
    /// Salt-and-pepper corruption fraction applied during training.
    pub noise_rho: f64,
    /// Checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        RunConfig {
            base_width: net.base_width,
            input_channels: net.input_channels,
            mrf_rates: net.mrf_rates,
            num_side_outputs: net.num_side_outputs,
            decoder_widths: net.decoder_widths,
            ssim_window: net.ssim_window,
            ssim_sigma: net.ssim_sigma,
            use_jaff: net.use_jaff,
            use_drf: net.use_drf,
            learning_rate: 1e-3,
            batch_size: 8,
            epochs: None,
            steps: 200,
            seed: 0,
            use_bce: true,
            use_iou: true,
            use_ssim: true,
            deep_supervision: true,
            augment: Augment::Flip,
            noise_rho: 0.0,
            checkpoint_every: 0,
        }
    }
}

fn parse_num<T: core::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(CliError::Config(format!("invalid boolean {other:?} for key {key}"))),
    }
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != N {
        return Err(CliError::Config(format!(
            "key {key} needs {N} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0usize; N];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_num(key, part)?;
    }
    Ok(out)
}

fn join_list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Reads a configuration file, or returns defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", p.display()))
                })?;
                RunConfig::parse(&text)
            }
        }
    }

    /// Parses flat `key=value` lines. `#` starts a comment, blank lines are
    /// skipped, unknown keys are hard errors. A `preset` line, if present,
    /// must come before any other setting.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        let mut saw_setting = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if saw_setting {
                    return Err(CliError::Config(format!(
                        "line {}: preset must come before other settings",
                        lineno + 1
                    )));
                }
                config.apply_preset(value)?;
            } else {
                config.set(key, value)?;
            }
            saw_setting = true;
        }
        Ok(config)
    }

    /// Rebuilds a configuration from canonical pairs, as stored in a
    /// checkpoint manifest.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for (key, value) in pairs {
            config.set(key, value)?;
        }
        Ok(config)
    }

    /// Applies one named preset on top of the current values.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "no_jaff" => self.use_jaff = false,
            "no_drf" => self.use_drf = false,
            "no_dp" => self.deep_supervision = false,
            "bce" => {
                self.use_iou = false;
                self.use_ssim = false;
            }
            "bce_iou" => self.use_ssim = false,
            "bce_ssim" => self.use_iou = false,
            "sd_saliency_900" => {
                self.epochs = Some(600);
                self.batch_size = 8;
                self.augment = Augment::Paper;
            }
            "magnetic_tile" => {
                self.epochs = Some(900);
                self.batch_size = 5;
                self.augment = Augment::Paper;
            }
            "dagm_2007" => {
                self.epochs = Some(300);
                self.batch_size = 8;
                self.augment = Augment::Paper;
            }
            other => {
                return Err(CliError::Config(format!("unknown preset {other:?}")));
            }
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "base_width" => self.base_width = parse_num(key, value)?,
            "input_channels" => self.input_channels = parse_num(key, value)?,
            "mrf_rates" => self.mrf_rates = parse_list(key, value)?,
            "num_side_outputs" => self.num_side_outputs = parse_num(key, value)?,
            "decoder_widths" => self.decoder_widths = parse_list(key, value)?,
            "ssim_window" => self.ssim_window = parse_num(key, value)?,
            "ssim_sigma" => self.ssim_sigma = parse_num(key, value)?,
            "use_jaff" => self.use_jaff = parse_bool(key, value)?,
            "use_drf" => self.use_drf = parse_bool(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => {
                self.epochs = if value == "none" { None } else { Some(parse_num(key, value)?) };
            }
            "steps" => self.steps = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "use_bce" => self.use_bce = parse_bool(key, value)?,
            "use_iou" => self.use_iou = parse_bool(key, value)?,
            "use_ssim" => self.use_ssim = parse_bool(key, value)?,
            "deep_supervision" => self.deep_supervision = parse_bool(key, value)?,
            "augment" => self.augment = Augment::parse(value)?,
            "noise_rho" => self.noise_rho = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            other => {
                return Err(CliError::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Canonical `(key, value)` pairs in a fixed order. Parsing them back
    /// reproduces the configuration exactly.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let pair = |k: &str, v: String| (k.to_string(), v);
        vec![
            pair("base_width", self.base_width.to_string()),
            pair("input_channels", self.input_channels.to_string()),
            pair("mrf_rates", join_list(&self.mrf_rates)),
            pair("num_side_outputs", self.num_side_outputs.to_string()),
            pair("decoder_widths", join_list(&self.decoder_widths)),
            pair("ssim_window", self.ssim_window.to_string()),
            pair("ssim_sigma", format!("{:?}", self.ssim_sigma)),
            pair("use_jaff", self.use_jaff.to_string()),
            pair("use_drf", self.use_drf.to_string()),
            pair("learning_rate", format!("{:?}", self.learning_rate)),
            pair("batch_size", self.batch_size.to_string()),
            pair("epochs", self.epochs.map_or("none".to_string(), |e| e.to_string())),
            pair("steps", self.steps.to_string()),
            pair("seed", self.seed.to_string()),
            pair("use_bce", self.use_bce.to_string()),
            pair("use_iou", self.use_iou.to_string()),
            pair("use_ssim", self.use_ssim.to_string()),
            pair("deep_supervision", self.deep_supervision.to_string()),
            pair("augment", self.augment.to_string()),
            pair("noise_rho", format!("{:?}", self.noise_rho)),
            pair("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    /// SHA-256 over the canonical pair listing, hex encoded.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in self.to_pairs() {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            base_width: self.base_width,
            input_channels: self.input_channels,
            mrf_rates: self.mrf_rates,
            num_side_outputs: self.num_side_outputs,
            decoder_widths: self.decoder_widths,
            ssim_window: self.ssim_window,
            ssim_sigma: self.ssim_sigma,
            use_jaff: self.use_jaff,
            use_drf: self.use_drf,
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            use_bce: self.use_bce,
            use_iou: self.use_iou,
            use_ssim: self.use_ssim,
            deep_supervision: self.deep_supervision,
            ssim: SsimConfig { window: self.ssim_window, sigma: self.ssim_sigma },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CliError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(CliError::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == Some(0) {
            return Err(CliError::Config("epochs must be at least 1 when set".into()));
        }
        if self.epochs.is_none() && self.steps == 0 {
            return Err(CliError::Config("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rho) {
            return Err(CliError::Config(format!(
                "noise_rho must lie in [0, 1], got {}",
                self.noise_rho
            )));
        }
        Ok(())
    }

    /// Names of architecture fields on which `self` and `other` disagree.
    /// Two configurations with no mismatches build interchangeable models.
    pub fn network_mismatches(&self, other: &RunConfig) -> Vec<&'static str> {
        let mut fields = Vec::new();
        if self.base_width != other.base_width {
            fields.push("base_width");
        }
        if self.input_channels != other.input_channels {
            fields.push("input_channels");
        }
        if self.mrf_rates != other.mrf_rates {
            fields.push("mrf_rates");
        }
        if self.num_side_outputs != other.num_side_outputs {
            fields.push("num_side_outputs");
        }
        if self.decoder_widths != other.decoder_widths {
            fields.push("decoder_widths");
        }
        if self.use_jaff != other.use_jaff {
            fields.push("use_jaff");
        }
        if self.use_drf != other.use_drf {
            fields.push("use_drf");
        }
        fields
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_pairs_and_text() {
        let config = RunConfig::default();
        let pairs = config.to_pairs();
        let back = RunConfig::from_pairs(&pairs).unwrap();
        assert_eq!(config, back);

        let text: String =
            pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let parsed = RunConfig::parse(&text).unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn comments_blanks_and_overrides_parse() {
        let text = "\n# full line comment\nbase_width = 16  # trailing comment\nsteps=50\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.base_width, 16);
        assert_eq!(config.steps, 50);
        assert_eq!(config.batch_size, 8);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_hard_errors() {
        let unknown = RunConfig::parse("bse_width = 16\n").unwrap_err();
        assert!(unknown.to_string().contains("bse_width"), "{unknown}");

        let bad = RunConfig::parse("batch_size = eight\n").unwrap_err();
        assert!(bad.to_string().contains("batch_size"), "{bad}");

        let shape = RunConfig::parse("mrf_rates = 1,2\n").unwrap_err();
        assert!(shape.to_string().contains("mrf_rates"), "{shape}");

        let noline = RunConfig::parse("just words\n").unwrap_err();
        assert!(noline.to_string().contains("key=value"), "{noline}");
    }

    #[test]
    fn presets_adjust_the_expected_fields() {
        let no_jaff = RunConfig::parse("preset = no_jaff\n").unwrap();
        assert!(!no_jaff.use_jaff && no_jaff.use_drf);

        let no_drf = RunConfig::parse("preset = no_drf\n").unwrap();
        assert!(no_drf.use_jaff && !no_drf.use_drf);

        let no_dp = RunConfig::parse("preset = no_dp\n").unwrap();
        assert!(!no_dp.deep_supervision && no_dp.use_bce);

        let bce = RunConfig::parse("preset = bce\n").unwrap();
        assert!(bce.use_bce && !bce.use_iou && !bce.use_ssim);

        let steel = RunConfig::parse("preset = sd_saliency_900\n").unwrap();
        assert_eq!((steel.epochs, steel.batch_size), (Some(600), 8));
        let tile = RunConfig::parse("preset = magnetic_tile\n").unwrap();
        assert_eq!((tile.epochs, tile.batch_size), (Some(900), 5));
        let dagm = RunConfig::parse("preset = dagm_2007\n").unwrap();
        assert_eq!((dagm.epochs, dagm.batch_size), (Some(300), 8));
    }

    #[test]
    fn preset_after_settings_is_rejected() {
        let err = RunConfig::parse("steps = 10\npreset = no_jaff\n").unwrap_err();
        assert!(err.to_string().contains("preset"), "{err}");
        assert!(RunConfig::parse("preset = not_a_preset\n").is_err());
    }

    #[test]
    fn hash_is_stable_and_field_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);

        let mut c = RunConfig::default();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn network_mismatches_name_differing_fields() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.base_width = 16;
        b.use_drf = false;
        assert_eq!(a.network_mismatches(&b), vec!["base_width", "use_drf"]);
        assert!(a.network_mismatches(&a).is_empty());

        let mut c = RunConfig::default();
        c.learning_rate = 0.5;
        assert!(a.network_mismatches(&c).is_empty());
    }

    #[test]
    fn validation_rejects_out_of_range_settings() {
        let mut bad = RunConfig::default();
        bad.learning_rate = 0.0;
        assert!(bad.validate().is_err());

        let mut bad = RunConfig::default();
        bad.batch_size = 0;
        assert!(bad.validate().is_err());

        let mut bad = RunConfig::default();
        bad.noise_rho = 1.5;
        assert!(bad.validate().is_err());

        assert!(RunConfig::default().validate().is_ok());
    }
}
