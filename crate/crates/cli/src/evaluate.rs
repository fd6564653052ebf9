//! Dataset evaluation: pairs prediction and ground-truth PNGs by stem, fans
//! the per-image metric work across threads, and writes aggregate, per-image
//! and threshold-curve CSV reports.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::GrayImage;
use jaffnet_core::metrics::{
    evaluate_pair, GroundTruthMask, ImageMetrics, MetricAccumulator, MetricReport, SaliencyMap,
};

use crate::dataset::png_stems;
use crate::error::{CliError, Result};
use crate::pngio;

#[derive(Debug)]
pub struct EvalArtifacts {
    pub report: MetricReport,
    pub per_image_csv: PathBuf,
    pub aggregate_csv: PathBuf,
    pub curve_csv: PathBuf,
    pub curve_png: Option<PathBuf>,
}

/// Worker cap: `JAFFNET_THREADS` when set, available parallelism otherwise.
fn thread_cap(jobs: usize) -> Result<usize> {
    let cap = match std::env::var("JAFFNET_THREADS") {
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        Ok(raw) => raw.parse::<usize>().ok().filter(|&n| n >= 1).ok_or_else(|| {
            CliError::Config(format!("JAFFNET_THREADS must be a positive integer, got {raw:?}"))
        })?,
    };
    Ok(cap.min(jobs).max(1))
}

fn saliency_from_png(path: &Path) -> Result<SaliencyMap> {
    let img = pngio::load_gray(path)?;
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| f64::from(p.0[0]) / 255.0).collect();
    SaliencyMap::new(h as usize, w as usize, values)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn mask_from_png(path: &Path) -> Result<GroundTruthMask> {
    let img = pngio::load_gray(path)?;
    jaffnet_core::data::binarize_gt(&pngio::tensor_from_gray(&img))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn evaluate_stem(pred_dir: &Path, gt_dir: &Path, stem: &str) -> Result<ImageMetrics> {
    let p = saliency_from_png(&pred_dir.join(format!("{stem}.png")))?;
    let g = mask_from_png(&gt_dir.join(format!("{stem}.png")))?;
    evaluate_pair(&p, &g).map_err(|e| CliError::Data(format!("{stem}.png: {e}")))
}

/// Evaluates every stem, preserving input order in the result.
fn evaluate_all(pred_dir: &Path, gt_dir: &Path, stems: &[String]) -> Result<Vec<ImageMetrics>> {
    let workers = thread_cap(stems.len())?;
    if workers <= 1 {
        return stems.iter().map(|s| evaluate_stem(pred_dir, gt_dir, s)).collect();
    }
    let results: Mutex<Vec<Option<Result<ImageMetrics>>>> =
        Mutex::new((0..stems.len()).map(|_| None).collect());
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= stems.len() {
                    break;
                }
                let outcome = evaluate_stem(pred_dir, gt_dir, &stems[i]);
                results.lock().expect("metric worker panicked")[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .expect("metric worker panicked")
        .into_iter()
        .map(|slot| slot.expect("every index was claimed by a worker"))
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:?}"))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Runs the full evaluation and writes all report files into `out_dir`.
pub fn cmd_eval(pred_dir: &Path, gt_dir: &Path, out_dir: &Path, plot: bool) -> Result<EvalArtifacts> {
    let stems = png_stems(pred_dir)?;
    if stems.is_empty() {
        return Err(CliError::Data(format!("no predictions found under {}", pred_dir.display())));
    }
    for stem in &stems {
        if !gt_dir.join(format!("{stem}.png")).is_file() {
            return Err(CliError::Data(format!("no ground truth for {stem}.png")));
        }
    }
    for stem in png_stems(gt_dir)? {
        if !pred_dir.join(format!("{stem}.png")).is_file() {
            return Err(CliError::Data(format!("no prediction for {stem}.png")));
        }
    }

    let per_image = evaluate_all(pred_dir, gt_dir, &stems)?;
    let mut accumulator = MetricAccumulator::new();
    for m in &per_image {
        accumulator.push(m);
    }
    let report = accumulator
        .report()
        .map_err(|e| CliError::Data(format!("aggregation failed: {e}")))?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut per_image_text = String::from("stem,mae,f_w,s_measure,e_measure\n");
    for (stem, m) in stems.iter().zip(&per_image) {
        per_image_text.push_str(&format!(
            "{stem},{:?},{},{:?},{:?}\n",
            m.mae,
            fmt_opt(m.f_w),
            m.s_m,
            m.e_m
        ));
    }
    let per_image_csv = out_dir.join("per_image.csv");
    write_file(&per_image_csv, &per_image_text)?;

    let aggregate_csv = out_dir.join("aggregate.csv");
    write_file(
        &aggregate_csv,
        &format!(
            "images,mae,f_w,s_measure,e_measure,max_f\n{},{:?},{},{:?},{:?},{}\n",
            report.image_count,
            report.mae,
            fmt_opt(report.f_w),
            report.s_m,
            report.e_m,
            fmt_opt(report.max_f)
        ),
    )?;

    let mut curve_text = String::from("threshold,precision,recall,f\n");
    if let Some(curves) = &report.curves {
        for i in 0..curves.precision.len() {
            curve_text.push_str(&format!(
                "{:?},{:?},{:?},{:?}\n",
                i as f64 / 255.0,
                curves.precision[i],
                curves.recall[i],
                curves.f_beta[i]
            ));
        }
    }
    let curve_csv = out_dir.join("curves.csv");
    write_file(&curve_csv, &curve_text)?;

    let curve_png = if plot {
        match &report.curves {
            None => None,
            Some(curves) => {
                let path = out_dir.join("curves.png");
                pngio::save_gray(&path, &render_pr_plot(&curves.recall, &curves.precision))?;
                Some(path)
            }
        }
    } else {
        None
    };

    Ok(EvalArtifacts { report, per_image_csv, aggregate_csv, curve_csv, curve_png })
}

const PLOT_SIDE: u32 = 512;
const PLOT_MARGIN: u32 = 48;

fn draw_line(img: &mut GrayImage, x0: i64, y0: i64, x1: i64, y1: i64, shade: u8) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, image::Luma([shade]));
        }
        if x == x1 && y == y1 {
            break;
        }
        let doubled = 2 * err;
        if doubled >= dy {
            err += dy;
            x += sx;
        }
        if doubled <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// A minimal precision-recall plot: white canvas, axes along the left and
/// bottom margins, and the curve as a dark polyline.
fn render_pr_plot(recall: &[f64], precision: &[f64]) -> GrayImage {
    let mut img = GrayImage::from_pixel(PLOT_SIDE, PLOT_SIDE, image::Luma([255]));
    let lo = PLOT_MARGIN as i64;
    let hi = (PLOT_SIDE - PLOT_MARGIN) as i64;
    draw_line(&mut img, lo, hi, hi, hi, 0);
    draw_line(&mut img, lo, lo, lo, hi, 0);
    for tick in 0..=4 {
        let t = lo + (hi - lo) * tick / 4;
        draw_line(&mut img, t, hi, t, hi + 4, 0);
        draw_line(&mut img, lo - 4, t, lo, t, 0);
    }
    let to_px = |r: f64, p: f64| {
        let x = lo as f64 + r.clamp(0.0, 1.0) * (hi - lo) as f64;
        let y = hi as f64 - p.clamp(0.0, 1.0) * (hi - lo) as f64;
        (x.round() as i64, y.round() as i64)
    };
    for window in recall.iter().zip(precision).collect::<Vec<_>>().windows(2) {
        let (r0, p0) = window[0];
        let (r1, p1) = window[1];
        let (x0, y0) = to_px(*r0, *p0);
        let (x1, y1) = to_px(*r1, *p1);
        draw_line(&mut img, x0, y0, x1, y1, 64);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use jaffnet_core::Tensor;

    /// `JAFFNET_THREADS` is process-global state: every test that reads or
    /// writes it holds this lock so the harness can stay multi-threaded.
    static ENV_LOCK: Mutex<()> = Mutex::new(());

    fn write_map(dir: &Path, stem: &str, f: impl FnMut(usize, usize, usize, usize) -> f32) {
        let t = Tensor::<f32>::from_fn([1, 1, 24, 24], f);
        pngio::save_gray(&dir.join(format!("{stem}.png")), &pngio::gray_from_tensor(&t).unwrap())
            .unwrap();
    }

    fn disk(cy: usize, cx: usize, r: usize) -> impl FnMut(usize, usize, usize, usize) -> f32 {
        move |_, _, y, x| {
            let (dy, dx) = (y as f64 - cy as f64, x as f64 - cx as f64);
            if dy * dy + dx * dx <= (r * r) as f64 {
                1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn perfect_predictions_score_one_across_the_report() {
        let _guard = ENV_LOCK.lock().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let gt = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        for (stem, c) in [("a", 8), ("b", 12), ("c", 15)] {
            write_map(pred.path(), stem, disk(c, c, 4));
            write_map(gt.path(), stem, disk(c, c, 4));
        }

        let artifacts = cmd_eval(pred.path(), gt.path(), out.path(), true).unwrap();
        let report = &artifacts.report;
        assert_eq!(report.image_count, 3);
        assert!(report.mae.abs() < 1e-12);
        assert!((report.f_w.unwrap() - 1.0).abs() < 1e-6);
        assert!((report.s_m - 1.0).abs() < 1e-6);
        assert!((report.e_m - 1.0).abs() < 1e-6);
        assert!((report.max_f.unwrap() - 1.0).abs() < 1e-6);

        let per_image = std::fs::read_to_string(&artifacts.per_image_csv).unwrap();
        assert_eq!(per_image.lines().count(), 4);
        assert!(per_image.lines().nth(1).unwrap().starts_with("a,"));
        let curves = std::fs::read_to_string(&artifacts.curve_csv).unwrap();
        assert_eq!(curves.lines().count(), 257);
        assert!(artifacts.curve_png.as_deref().is_some_and(Path::is_file));
    }

    #[test]
    fn unpaired_files_name_the_offender() {
        let _guard = ENV_LOCK.lock().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let gt = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        write_map(pred.path(), "present", disk(8, 8, 3));
        write_map(pred.path(), "orphan", disk(8, 8, 3));
        write_map(gt.path(), "present", disk(8, 8, 3));

        let err = cmd_eval(pred.path(), gt.path(), out.path(), false).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("orphan.png"), "{err}");

        write_map(gt.path(), "orphan", disk(8, 8, 3));
        write_map(gt.path(), "extra_gt", disk(8, 8, 3));
        let err = cmd_eval(pred.path(), gt.path(), out.path(), false).unwrap_err();
        assert!(err.to_string().contains("extra_gt.png"), "{err}");
    }

    #[test]
    fn thread_fanout_matches_serial_evaluation_and_env_cap_is_validated() {
        let _guard = ENV_LOCK.lock().unwrap();
        let pred = tempfile::tempdir().unwrap();
        let gt = tempfile::tempdir().unwrap();
        for i in 0..6 {
            write_map(pred.path(), &format!("{i:02}"), disk(6 + i, 6 + i, 3));
            write_map(gt.path(), &format!("{i:02}"), disk(6 + i, 6 + i, 2));
        }
        let stems = png_stems(pred.path()).unwrap();
        let serial: Vec<ImageMetrics> = stems
            .iter()
            .map(|s| evaluate_stem(pred.path(), gt.path(), s).unwrap())
            .collect();
        let parallel = evaluate_all(pred.path(), gt.path(), &stems).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.mae, b.mae);
            assert_eq!(a.s_m, b.s_m);
        }

        // The env var is process-global, so its cases live in this one test.
        std::env::set_var("JAFFNET_THREADS", "zero");
        let err = thread_cap(4).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        std::env::set_var("JAFFNET_THREADS", "2");
        assert_eq!(thread_cap(4).unwrap(), 2);
        std::env::remove_var("JAFFNET_THREADS");
        assert!(thread_cap(4).unwrap() >= 1);
    }
}
