//! Corrupted-MNIST style data: one directory per corruption type holding
//! `images.npy` and `labels.npy`, turned into one-vs-rest binary regression
//! tasks (corruption × digit).

pub mod npy;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{ProblemDims, RngStream, SampleBatch, TaskSource};
use crate::error::{Error, Result};
use npy::{NpyArray, NpyData};

pub const DIGITS: usize = 10;

/// Flattened images scaled to `[0, 1]` with their digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageArray {
    pub corruption: String,
    /// Row-major `n × width` pixels.
    pixels: Vec<f32>,
    width: usize,
    pub labels: Vec<u8>,
}

impl ImageArray {
    pub fn new(corruption: impl Into<String>, pixels: Vec<f32>, width: usize, labels: Vec<u8>) -> Result<Self> {
        let corruption = corruption.into();
        if width == 0 || pixels.len() != width * labels.len() {
            return Err(Error::Dataset(format!(
                "{corruption}: {} pixels do not form {} rows of width {width}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Dataset(format!("{corruption}: pixel value {p} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= DIGITS) {
            return Err(Error::Dataset(format!("{corruption}: label {l} outside 0..=9")));
        }
        Ok(ImageArray { corruption, pixels, width, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.width..(i + 1) * self.width]
    }

    /// Gathers rows `idx` as an f64 matrix.
    pub fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), self.width, |i, j| self.pixels[idx[i] * self.width + j] as f64)
    }

    /// 0/1 indicator of `digit` for rows `idx`.
    pub fn indicator(&self, idx: &[usize], digit: u8) -> DVector<f64> {
        DVector::from_fn(idx.len(), |i, _| f64::from(u8::from(self.labels[idx[i]] == digit)))
    }

    /// Reads `<dir>/images.npy` and `<dir>/labels.npy`.
    pub fn load(dir: &Path, corruption: impl Into<String>) -> Result<Self> {
        let corruption = corruption.into();
        let images = npy::parse_npy(&fs::read(dir.join("images.npy"))?)?;
        let labels = npy::parse_npy(&fs::read(dir.join("labels.npy"))?)?;
        Self::from_npy(corruption, &images, &labels)
    }

    pub fn from_npy(corruption: String, images: &NpyArray, labels: &NpyArray) -> Result<Self> {
        let n = *images.shape.first().ok_or_else(|| Error::Dataset(format!("{corruption}: scalar image array")))?;
        let width: usize = images.shape[1..].iter().product();
        let pixels: Vec<f32> = match &images.data {
            NpyData::U8(v) => v.iter().map(|&p| p as f32 / 255.0).collect(),
            other => {
                let raw = other.to_f64();
                let scale = if raw.iter().any(|&p| p > 1.0) { 1.0 / 255.0 } else { 1.0 };
                raw.iter().map(|&p| (p * scale) as f32).collect()
            }
        };
        let labels: Vec<u8> = labels
            .data
            .to_f64()
            .into_iter()
            .map(|l| {
                if l.fract() == 0.0 && (0.0..DIGITS as f64).contains(&l) {
                    Ok(l as u8)
                } else {
                    Err(Error::Dataset(format!("{corruption}: label {l} outside 0..=9")))
                }
            })
            .collect::<Result<_>>()?;
        if labels.len() != n {
            return Err(Error::Dataset(format!("{corruption}: {n} images but {} labels", labels.len())));
        }
        Self::new(corruption, pixels, width, labels)
    }
}

/// One-vs-rest regression task: `Y_i = 1` iff `label_i = digit`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTask {
    pub corruption: String,
    pub digit: u8,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl BinaryTask {
    pub fn name(&self) -> String {
        task_name(&self.corruption, self.digit)
    }
}

pub fn task_name(corruption: &str, digit: u8) -> String {
    format!("{corruption}_{digit}")
}

pub fn build_binary_task(images: &ImageArray, digit: u8) -> Result<BinaryTask> {
    if digit as usize >= DIGITS {
        return Err(Error::InvalidArgument(format!("digit {digit} outside 0..=9")));
    }
    let all: Vec<usize> = (0..images.len()).collect();
    Ok(BinaryTask {
        corruption: images.corruption.clone(),
        digit,
        x: images.rows(&all),
        y: images.indicator(&all, digit),
    })
}

/// Draws rows of one binary task: without replacement until the pool is
/// exhausted, then with replacement.
#[derive(Debug, Clone)]
pub struct SourceOracle {
    images: Arc<ImageArray>,
    pub digit: u8,
    pool: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    warned: bool,
    /// Every row index handed out, in order.
    pub history: Vec<usize>,
}

impl SourceOracle {
    fn new(images: Arc<ImageArray>, digit: u8, mut pool: Vec<usize>, stream: RngStream) -> Self {
        let mut rng = stream.rng();
        pool.shuffle(&mut rng);
        SourceOracle { images, digit, pool, cursor: 0, rng, warned: false, history: Vec::new() }
    }

    pub fn name(&self) -> String {
        task_name(&self.images.corruption, self.digit)
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn draw_indices(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n && self.cursor < self.pool.len() {
            out.push(self.pool[self.cursor]);
            self.cursor += 1;
        }
        if out.len() < n && !self.pool.is_empty() {
            if !self.warned {
                warn!("source task {} exhausted its {} rows; sampling with replacement", self.name(), self.pool.len());
                self.warned = true;
            }
            while out.len() < n {
                out.push(self.pool[self.rng.random_range(0..self.pool.len())]);
            }
        }
        self.history.extend_from_slice(&out);
        out
    }

    pub fn draw(&mut self, task: usize, n: usize) -> SampleBatch {
        let idx = self.draw_indices(n);
        SampleBatch { task, x: self.images.rows(&idx), y: self.images.indicator(&idx, self.digit) }
    }
}

/// Source oracles plus the frozen target sample for one target task.
#[derive(Debug, Clone)]
pub struct RealSuite {
    pub target_name: String,
    pub target: SampleBatch,
    /// Target-corruption rows outside the frozen sample, for evaluation.
    pub target_test: SampleBatch,
    /// Row indices of the frozen target sample.
    pub target_rows: Vec<usize>,
    pub oracles: Vec<SourceOracle>,
}

impl RealSuite {
    pub fn source_names(&self) -> Vec<String> {
        self.oracles.iter().map(SourceOracle::name).collect()
    }
}

/// Corruption directories under `root` (those holding `images.npy`), sorted.
pub fn list_corruptions(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.path().join("images.npy").is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

pub fn load_all(root: &Path, corruptions: &[String]) -> Result<Vec<Arc<ImageArray>>> {
    corruptions
        .iter()
        .map(|c| ImageArray::load(&root.join(c), c.clone()).map(Arc::new))
        .collect()
}

/// Builds the suite for target `(corruption, digit)` from loaded arrays.
///
/// The target's `n_target` rows are drawn once from stream `(0, 0)`; source
/// task `t` (1-based, corruption-major then digit, target skipped) shuffles
/// its pool with stream `(t, 0)`. The source task matching the target never
/// sees the frozen target rows. At most `max_test` held-out target rows are
/// kept for evaluation.
pub fn make_real_suite(
    arrays: &[Arc<ImageArray>],
    target: (&str, u8),
    n_target: usize,
    max_test: usize,
    seed: u64,
) -> Result<RealSuite> {
    let (target_corruption, target_digit) = target;
    if target_digit as usize >= DIGITS {
        return Err(Error::InvalidArgument(format!("digit {target_digit} outside 0..=9")));
    }
    let target_images = arrays
        .iter()
        .find(|a| a.corruption == target_corruption)
        .ok_or_else(|| Error::Dataset(format!("target corruption {target_corruption:?} not found")))?;
    if n_target == 0 || n_target > target_images.len() {
        return Err(Error::Dataset(format!(
            "cannot draw {n_target} target samples from {} rows",
            target_images.len()
        )));
    }
    let mut order: Vec<usize> = (0..target_images.len()).collect();
    order.shuffle(&mut RngStream::new(seed, 0, 0).rng());
    let mut target_rows = order[..n_target].to_vec();
    target_rows.sort_unstable();
    let mut test_rows: Vec<usize> = order[n_target..].iter().take(max_test).copied().collect();
    test_rows.sort_unstable();

    // sources are numbered 1..=M with M = arrays * DIGITS - 1
    let target_task = arrays.len() * DIGITS;
    let batch = |rows: &[usize]| SampleBatch {
        task: target_task,
        x: target_images.rows(rows),
        y: target_images.indicator(rows, target_digit),
    };
    let target = batch(&target_rows);
    let target_test = batch(&test_rows);

    let mut oracles = Vec::new();
    for images in arrays {
        for digit in 0..DIGITS as u8 {
            let is_target = images.corruption == target_corruption && digit == target_digit;
            if is_target {
                continue;
            }
            let pool: Vec<usize> = (0..images.len()).collect();
            let stream = RngStream::new(seed, oracles.len() + 1, 0);
            oracles.push(SourceOracle::new(Arc::clone(images), digit, pool, stream));
        }
    }
    Ok(RealSuite {
        target_name: task_name(target_corruption, target_digit),
        target,
        target_test,
        target_rows,
        oracles,
    })
}

/// [`TaskSource`] over a [`RealSuite`] with representation size `k`.
#[derive(Debug, Clone)]
pub struct RealSource {
    pub suite: RealSuite,
    k: usize,
    drawn: usize,
}

impl RealSource {
    pub fn new(suite: RealSuite, k: usize) -> Result<Self> {
        let d = suite.target.dim();
        ProblemDims::new(d, k, suite.oracles.len())?;
        Ok(RealSource { suite, k, drawn: 0 })
    }
}

impl TaskSource for RealSource {
    fn dims(&self) -> ProblemDims {
        ProblemDims { d: self.suite.target.dim(), k: self.k, m: self.suite.oracles.len() }
    }

    fn draw(&mut self, task: usize, n: usize, _epoch: u32) -> Result<SampleBatch> {
        let m = self.suite.oracles.len();
        if task == 0 || task > m {
            return Err(Error::UnknownTask { task, max: m });
        }
        self.drawn += n;
        Ok(self.suite.oracles[task - 1].draw(task, n))
    }

    fn target(&self) -> &SampleBatch {
        &self.suite.target
    }

    fn drawn(&self) -> usize {
        self.drawn
    }
}

/// Writes an [`ImageArray`]-compatible pair of npy files into `dir`.
pub fn write_image_dir(dir: &Path, images: &NpyArray, labels: &NpyArray) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("images.npy"), npy::write_npy(images))?;
    fs::write(dir.join("labels.npy"), npy::write_npy(labels))?;
    Ok(())
}

/// Random images for tests and demos: `n` images of width `width` whose
/// brightness pattern depends on the label.
pub fn synthetic_images<R: Rng>(rng: &mut R, n: usize, width: usize) -> (NpyArray, NpyArray) {
    let mut pixels = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label: u8 = rng.random_range(0..DIGITS as u8);
        for j in 0..width {
            let base = if j % DIGITS == label as usize { 180u8 } else { 20u8 };
            pixels.push(base.saturating_add(rng.random_range(0..60u8)));
        }
        labels.push(label);
    }
    (
        NpyArray { shape: vec![n, width], data: NpyData::U8(pixels) },
        NpyArray { shape: vec![n], data: NpyData::U8(labels) },
    )
}
