//! 8-bit grayscale PNG input and output, bridging image files and tensors.

use std::path::Path;

use image::{GrayImage, ImageFormat};
use jaffnet_core::Tensor;

use crate::error::{CliError, Result};

/// Loads any supported PNG and collapses it to 8-bit grayscale.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("cannot read image {}: {e}", path.display())))?;
    Ok(img.to_luma8())
}

/// Writes an 8-bit grayscale PNG.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("cannot write image {}: {e}", path.display())))
}

/// Image to `[1, 1, H, W]` tensor with values `v / 255`.
pub fn tensor_from_gray(img: &GrayImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    Tensor::from_fn([1, 1, h as usize, w as usize], |_, _, y, x| {
        f32::from(img.get_pixel(x as u32, y as u32).0[0]) / 255.0
    })
}

/// `[1, 1, H, W]` tensor to image: clamp to `[0, 1]`, scale by 255, round.
pub fn gray_from_tensor(t: &Tensor<f32>) -> Result<GrayImage> {
    let [n, c, h, w] = t.shape();
    if n != 1 || c != 1 {
        return Err(CliError::Data(format!(
            "expected a single-channel map, got shape {:?}",
            t.shape()
        )));
    }
    let data = t.data();
    let mut img = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = f64::from(data[y * w + x]).clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, image::Luma([(v * 255.0).round() as u8]));
        }
    }
    Ok(img)
}
