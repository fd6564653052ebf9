//! Architecture inspection: exact parameter count and per-stage output
//! shapes for a reference input.

use std::io::Write;

use jaffnet_core::model::JaffNet;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Reference input side used for the printed shape walk.
const INSPECT_SIDE: usize = 256;

/// Builds the configured model and prints its parameter count followed by
/// the channelsxheightxwidth output shape of every stage.
pub fn cmd_inspect(run: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let network = run.network();
    let model = JaffNet::<f32>::new(&network, run.seed)?;
    let w = network.base_width;
    let channels = [w, 2 * w, 4 * w, 8 * w, 8 * w];
    let side = INSPECT_SIDE;

    let mut lines = String::new();
    lines.push_str(&format!("parameters: {}\n", model.count_params()));
    lines.push_str(&format!("input: {}x{side}x{side}\n", network.input_channels));
    for (i, c) in channels.iter().enumerate() {
        let scale = 1 << i;
        lines.push_str(&format!("encoder E{}: {c}x{}x{}\n", i + 1, side / scale, side / scale));
    }
    lines.push_str(&format!("deep stage: {}x{}x{}\n", channels[4], side / 16, side / 16));
    for (i, c) in network.decoder_widths.iter().enumerate() {
        let scale = 8 >> i;
        lines.push_str(&format!("decoder D{}: {c}x{}x{}\n", i + 1, side / scale, side / scale));
    }
    lines.push_str(&format!(
        "side outputs: {} maps at 1x{side}x{side}\n",
        network.num_side_outputs
    ));
    out.write_all(lines.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write inspection report: {e}")))
}
