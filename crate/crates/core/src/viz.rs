//! Eight-panel walkthrough of a two-step attention prediction.
//!
//! Panels, in order:
//!
//! 1. standardized log-mel input
//! 2. decoder reconstruction
//! 3. to 5. frequency attention for the three highest-scoring classes
//! 6. first-step output, classes by time
//! 7. time attention, classes by time
//! 8. clip probabilities as a bar chart
//!
//! Every value is drawn raw on a fixed color scale; nothing is thresholded.
//! Panels are always rendered from the single-precision array dump, so
//! re-plotting a dump reproduces the images pixel for pixel.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::features::{config_hash, read_matrix_records, write_matrix_records, MatrixRecord};
use crate::model::Checkpoint;
use crate::pooling::HeadKind;

pub const N_PANELS: usize = 8;
pub const DUMP_FILE: &str = "attention_arrays.bin";
/// Color range for standardized log-mel panels.
pub const LOGMEL_RANGE: [f64; 2] = [-3.0, 3.0];
/// Color range for attention weights, intermediate outputs and probabilities.
pub const WEIGHT_RANGE: [f64; 2] = [0.0, 1.0];

const TOP_K: usize = 3;
const BAR_WIDTH: u32 = 32;
const BAR_GAP: u32 = 8;
const BAR_HEIGHT: u32 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// 1-based position in the walkthrough.
    pub index: usize,
    pub path: PathBuf,
    pub title: String,
    /// Class shown by a frequency-attention panel.
    pub class_index: Option<usize>,
    pub value_range: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Visualization {
    pub panels: Vec<Panel>,
    pub dump: PathBuf,
    /// Classes of panels 3 to 5, highest probability first.
    pub top_classes: Vec<usize>,
}

/// Runs the checkpoint on one standardized `T x F` input and collects every
/// array the panels need, rounded to single precision.
pub fn attention_dump(ckpt: &Checkpoint, input: ArrayView2<f64>) -> Result<Vec<MatrixRecord>> {
    let head = &ckpt.model.config.head;
    if *head != HeadKind::TwoStepAttention {
        return Err(Error::Unsupported(format!(
            "the attention walkthrough needs a 2ap checkpoint, this one uses {head}"
        )));
    }
    let k = ckpt.model.config.n_classes;
    if k < TOP_K {
        return Err(Error::Unsupported(format!(
            "the walkthrough shows {TOP_K} classes, the checkpoint has {k}"
        )));
    }
    let x = input.insert_axis(Axis(0));
    let out = ckpt.model.forward(x, true)?;
    let maps = &out.attention[0];
    let recon = out.reconstruction.as_ref().expect("reconstruction was requested");
    let hash = u64::from_str_radix(&ckpt.config_hash, 16)
        .unwrap_or_else(|_| config_hash(&ckpt.model.config));

    let mut records = vec![
        MatrixRecord::from_f64("input", hash, &input.to_owned()),
        MatrixRecord::from_f64("reconstruction", hash, &recon.index_axis(Axis(0), 0).to_owned()),
    ];
    for c in 0..k {
        let w = maps.step1_weights.index_axis(Axis(0), c).to_owned();
        records.push(MatrixRecord::from_f64(format!("step1_weights/{c}"), hash, &w));
    }
    records.push(MatrixRecord::from_f64("step1_output", hash, &maps.step1_output));
    records.push(MatrixRecord::from_f64("step2_weights", hash, &maps.step2_weights));
    let probs = maps.step2_output.clone().insert_axis(Axis(0));
    records.push(MatrixRecord::from_f64("step2_output", hash, &probs));
    Ok(records)
}

/// Indices of the `n` largest entries, descending; ties keep the lower index first.
pub fn top_k_classes(probs: &[f32], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

fn find<'a>(records: &'a [MatrixRecord], name: &str) -> Result<&'a Array2<f32>> {
    records
        .iter()
        .find(|r| r.name == name)
        .map(|r| &r.values)
        .ok_or_else(|| Error::InvalidArgument(format!("array dump has no `{name}` record")))
}

/// Draws all eight panels from an array dump into `out_dir`.
pub fn render_panels(records: &[MatrixRecord], out_dir: &Path) -> Result<Vec<Panel>> {
    std::fs::create_dir_all(out_dir)?;
    let probs = find(records, "step2_output")?;
    let probs: Vec<f32> = probs.iter().copied().collect();
    let top = top_k_classes(&probs, TOP_K);

    let mut panels = Vec::with_capacity(N_PANELS);
    let mut emit = |img: RgbImage, file: String, title: String, class_index, range| -> Result<()> {
        let path = out_dir.join(file);
        img.save(&path)?;
        panels.push(Panel { index: panels.len() + 1, path, title, class_index, value_range: range });
        Ok(())
    };

    emit(
        spectrogram_image(find(records, "input")?, LOGMEL_RANGE),
        "01_input_logmel.png".into(),
        "standardized log-mel input".into(),
        None,
        LOGMEL_RANGE,
    )?;
    emit(
        spectrogram_image(find(records, "reconstruction")?, LOGMEL_RANGE),
        "02_reconstruction.png".into(),
        "decoder reconstruction".into(),
        None,
        LOGMEL_RANGE,
    )?;
    for (rank, &c) in top.iter().enumerate() {
        emit(
            spectrogram_image(find(records, &format!("step1_weights/{c}"))?, WEIGHT_RANGE),
            format!("{:02}_step1_attention_rank{}_class{c}.png", rank + 3, rank + 1),
            format!("frequency attention, class {c} (rank {})", rank + 1),
            Some(c),
            WEIGHT_RANGE,
        )?;
    }
    emit(
        heatmap(find(records, "step1_output")?.view(), WEIGHT_RANGE),
        "06_step1_output.png".into(),
        "first-step output, classes by time".into(),
        None,
        WEIGHT_RANGE,
    )?;
    emit(
        heatmap(find(records, "step2_weights")?.view(), WEIGHT_RANGE),
        "07_step2_attention.png".into(),
        "time attention, classes by time".into(),
        None,
        WEIGHT_RANGE,
    )?;
    emit(
        bar_chart(&probs),
        "08_clip_probabilities.png".into(),
        "clip probabilities".into(),
        None,
        WEIGHT_RANGE,
    )?;
    Ok(panels)
}

/// Writes the array dump and the eight panels for one standardized input.
pub fn visualize(ckpt: &Checkpoint, input: ArrayView2<f64>, out_dir: &Path) -> Result<Visualization> {
    let records = attention_dump(ckpt, input)?;
    std::fs::create_dir_all(out_dir)?;
    let dump = out_dir.join(DUMP_FILE);
    write_matrix_records(&dump, &records)?;
    let panels = render_panels(&records, out_dir)?;
    let top_classes = panels.iter().filter_map(|p| p.class_index).collect();
    Ok(Visualization { panels, dump, top_classes })
}

/// Re-plots a dump written by [`visualize`].
pub fn rerender(dump: &Path, out_dir: &Path) -> Result<Vec<Panel>> {
    render_panels(&read_matrix_records(dump)?, out_dir)
}

fn color(v: f32, range: [f64; 2]) -> Rgb<u8> {
    let t = ((v as f64 - range[0]) / (range[1] - range[0])).clamp(0.0, 1.0);
    let t = if t.is_nan() { 0.0 } else { t };
    let c = colorous::VIRIDIS.eval_continuous(t);
    Rgb([c.r, c.g, c.b])
}

/// Cell size that makes a grid at least roughly 400 by 120 pixels.
fn cell_size(rows: usize, cols: usize) -> (u32, u32) {
    let sx = 400usize.div_ceil(cols.max(1)).clamp(1, 8) as u32;
    let sy = 120usize.div_ceil(rows.max(1)).clamp(1, 32) as u32;
    (sx, sy)
}

/// Heatmap of a `rows x cols` grid, first row at the top.
fn heatmap(grid: ArrayView2<f32>, range: [f64; 2]) -> RgbImage {
    let (rows, cols) = grid.dim();
    let (sx, sy) = cell_size(rows, cols);
    RgbImage::from_fn(cols as u32 * sx, rows as u32 * sy, |x, y| {
        color(grid[[(y / sy) as usize, (x / sx) as usize]], range)
    })
}

/// `T x F` matrix drawn with time to the right and low frequencies at the bottom.
fn spectrogram_image(values: &Array2<f32>, range: [f64; 2]) -> RgbImage {
    let mut grid = values.t();
    grid.invert_axis(Axis(0));
    heatmap(grid, range)
}

fn bar_chart(probs: &[f32]) -> RgbImage {
    let width = probs.len() as u32 * (BAR_WIDTH + BAR_GAP) + BAR_GAP;
    let height = BAR_HEIGHT + 2;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    for x in 0..width {
        img.put_pixel(x, height - 1, Rgb([96, 96, 96]));
    }
    for (k, &p) in probs.iter().enumerate() {
        let bar = (p.clamp(0.0, 1.0) as f64 * BAR_HEIGHT as f64).round() as u32;
        let x0 = BAR_GAP + k as u32 * (BAR_WIDTH + BAR_GAP);
        let fill = color(p, WEIGHT_RANGE);
        for y in (height - 1 - bar)..(height - 1) {
            for x in x0..x0 + BAR_WIDTH {
                img.put_pixel(x, y, fill);
            }
        }
    }
    img
}
