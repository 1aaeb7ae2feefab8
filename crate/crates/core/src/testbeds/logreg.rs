//! Multinomial logistic regression on outer-product features `vec(x x^T)`.
//!
//! Parameters are laid out class by class: a `d x d` weight block followed by
//! a bias, with `d = side^2` the downsampled image size.

use rand::seq::index;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use super::{batch_rng, sampled, Batch, Problem};
use crate::error::{PsgdError, Result};
use crate::{Matrix, SeededRng, Vector};

/// Square grayscale images with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    side: usize,
    images: Vec<Vec<f64>>,
    labels: Vec<u8>,
    classes: usize,
}

impl Dataset {
    pub fn new(side: usize, images: Vec<Vec<f64>>, labels: Vec<u8>, classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(PsgdError::DimensionMismatch { expected: images.len(), found: labels.len() });
        }
        if let Some(img) = images.iter().find(|img| img.len() != side * side) {
            return Err(PsgdError::DimensionMismatch { expected: side * side, found: img.len() });
        }
        if labels.iter().any(|&l| l as usize >= classes) {
            return Err(PsgdError::InvalidConfig(format!("label outside 0..{classes}")));
        }
        Ok(Self { side, images, labels, classes })
    }

    /// Seeded Gaussian class blobs: a random mean image per class plus
    /// isotropic pixel noise of standard deviation `spread`, clamped to `[0, 1]`
    /// and then dimmed by a Gaussian vignette `exp(-r^2 / (2 (side/4)^2))` of
    /// the distance `r` to the image centre, so that, as in digit images,
    /// border pixels carry far less energy than central ones.
    pub fn synthetic_blobs(count: usize, classes: usize, side: usize, spread: f64, seed: u64) -> Result<Self> {
        if classes < 2 || side == 0 {
            return Err(PsgdError::InvalidConfig("blobs need >= 2 classes and side > 0".into()));
        }
        let mut rng = SeededRng::seed_from_u64(seed);
        let d = side * side;
        let centre = (side as f64 - 1.0) / 2.0;
        let width = side as f64 / 4.0;
        let vignette: Vec<f64> = (0..d)
            .map(|j| {
                let (r, c) = ((j / side) as f64 - centre, (j % side) as f64 - centre);
                (-(r * r + c * c) / (2.0 * width * width)).exp()
            })
            .collect();
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let means: Vec<Vec<f64>> =
            (0..classes).map(|_| (0..d).map(|_| (0.5 + 0.25 * normal()).clamp(0.0, 1.0)).collect()).collect();
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let c = i % classes;
            images.push(
                means[c].iter().zip(&vignette).map(|(m, w)| w * (m + spread * normal()).clamp(0.0, 1.0)).collect(),
            );
            labels.push(c as u8);
        }
        Self::new(side, images, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image(&self, i: usize) -> &[f64] {
        &self.images[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Keeps the first `n` items.
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }

    /// Splits off the items from `at` onwards.
    pub fn split(mut self, at: usize) -> (Self, Self) {
        let images = self.images.split_off(at.min(self.len()));
        let labels = self.labels.split_off(at.min(self.labels.len()));
        let rest = Self { side: self.side, images, labels, classes: self.classes };
        (self, rest)
    }

    /// Box-filter downsampling to `side x side`.
    pub fn downsample(&self, side: usize) -> Result<Self> {
        if side == 0 || side > self.side {
            return Err(PsgdError::InvalidConfig(format!("cannot downsample {} to {side}", self.side)));
        }
        let n = self.side;
        let bounds: Vec<(usize, usize)> =
            (0..side).map(|i| (i * n / side, ((i + 1) * n / side).max(i * n / side + 1))).collect();
        let images = self
            .images
            .iter()
            .map(|img| {
                let mut out = Vec::with_capacity(side * side);
                for &(r0, r1) in &bounds {
                    for &(c0, c1) in &bounds {
                        let sum: f64 = (r0..r1).flat_map(|r| (c0..c1).map(move |c| img[r * n + c])).sum();
                        out.push(sum / ((r1 - r0) * (c1 - c0)) as f64);
                    }
                }
                out
            })
            .collect();
        Self::new(side, images, self.labels.clone(), self.classes)
    }

    fn feature_matrix(&self) -> Matrix {
        let d = self.side * self.side;
        Matrix::from_fn(self.len(), d, |i, j| self.images[i][j])
    }
}

#[derive(Debug, Clone)]
pub struct LogRegOuter {
    x: Matrix,
    y: Vec<u8>,
    test: Option<(Matrix, Vec<u8>)>,
    classes: usize,
    d: usize,
    batch_size: usize,
}

impl LogRegOuter {
    /// Downsamples `train` (and `test`) to `side` and fixes the minibatch size;
    /// `batch_size >= train.len()` means full-batch gradients.
    pub fn new(train: &Dataset, test: Option<&Dataset>, side: usize, batch_size: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(PsgdError::InvalidConfig("empty training set".into()));
        }
        if batch_size == 0 {
            return Err(PsgdError::InvalidConfig("batch size 0".into()));
        }
        let tr = train.downsample(side)?;
        let test = match test {
            Some(t) if !t.is_empty() => {
                let t = t.downsample(side)?;
                Some((t.feature_matrix(), t.labels.clone()))
            }
            _ => None,
        };
        Ok(Self {
            x: tr.feature_matrix(),
            y: tr.labels.clone(),
            test,
            classes: train.classes,
            d: side * side,
            batch_size: batch_size.min(train.len()),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn train_len(&self) -> usize {
        self.y.len()
    }

    fn stride(&self) -> usize {
        self.d * self.d + 1
    }

    fn block<'a>(&self, theta: &'a Vector, c: usize) -> nalgebra::DMatrixView<'a, f64> {
        let s = c * self.stride();
        nalgebra::DMatrixView::from_slice(&theta.as_slice()[s..s + self.d * self.d], self.d, self.d)
    }

    fn rows(&self, batch: &Batch) -> Option<Vec<usize>> {
        match batch {
            Batch::Full => None,
            Batch::Sampled(seed) => {
                let mut rng = batch_rng(*seed, 3);
                Some(index::sample(&mut rng, self.y.len(), self.batch_size).into_vec())
            }
        }
    }

    fn select(&self, batch: &Batch) -> (Matrix, Vec<u8>) {
        match self.rows(batch) {
            None => (self.x.clone(), self.y.clone()),
            Some(rows) => (self.x.select_rows(rows.iter()), rows.iter().map(|&i| self.y[i]).collect()),
        }
    }

    /// `B x classes` matrix of `x^T W_c x + b_c`.
    fn logits(&self, theta: &Vector, x: &Matrix) -> Matrix {
        let mut z = Matrix::zeros(x.nrows(), self.classes);
        for c in 0..self.classes {
            let xw = x * self.block(theta, c);
            let bias = theta[c * self.stride() + self.d * self.d];
            for i in 0..x.nrows() {
                z[(i, c)] = xw.row(i).dot(&x.row(i)) + bias;
            }
        }
        z
    }

    /// Row-wise softmax and the mean cross-entropy.
    fn softmax(z: &Matrix, y: &[u8]) -> (Matrix, f64) {
        let mut p = z.clone();
        let mut loss = 0.0;
        for i in 0..z.nrows() {
            let mut row = p.row_mut(i);
            let m = row.max();
            row.apply(|v| *v = (*v - m).exp());
            let s = row.sum();
            row /= s;
            loss += s.ln() + m - z[(i, y[i] as usize)];
        }
        (p, loss / z.nrows() as f64)
    }

    /// Scatters per-sample class weights `r` into `sum_i r_ic x_i x_i^T / B` blocks.
    fn scatter(&self, x: &Matrix, r: &Matrix) -> Vector {
        let b = x.nrows() as f64;
        let mut out = Vector::zeros(self.classes * self.stride());
        for c in 0..self.classes {
            let mut xr = x.clone();
            for (i, mut row) in xr.row_iter_mut().enumerate() {
                row *= r[(i, c)] / b;
            }
            let g = x.transpose() * xr;
            let s = c * self.stride();
            out.as_mut_slice()[s..s + self.d * self.d].copy_from_slice(g.as_slice());
            out[s + self.d * self.d] = r.column(c).sum() / b;
        }
        out
    }

    pub fn train_loss(&self, theta: &Vector) -> f64 {
        self.loss(theta, &Batch::Full)
    }

    /// Misclassification rate on the held-out set, if one was given.
    pub fn test_error(&self, theta: &Vector) -> Option<f64> {
        let (x, y) = self.test.as_ref()?;
        let z = self.logits(theta, x);
        let wrong = (0..x.nrows()).filter(|&i| z.row(i).transpose().argmax().0 != y[i] as usize).count();
        Some(wrong as f64 / x.nrows() as f64)
    }
}

impl Problem for LogRegOuter {
    fn name(&self) -> &str {
        "logreg"
    }

    fn dim(&self) -> usize {
        self.classes * self.stride()
    }

    fn init(&self, _rng: &mut SeededRng) -> Vector {
        Vector::zeros(self.dim())
    }

    fn loss(&self, theta: &Vector, batch: &Batch) -> f64 {
        let (x, y) = self.select(batch);
        Self::softmax(&self.logits(theta, &x), &y).1
    }

    fn grad(&self, theta: &Vector, batch: &Batch) -> Vector {
        self.loss_grad(theta, batch).1
    }

    fn loss_grad(&self, theta: &Vector, batch: &Batch) -> (f64, Vector) {
        let (x, y) = self.select(batch);
        let (mut p, loss) = Self::softmax(&self.logits(theta, &x), &y);
        for (i, &l) in y.iter().enumerate() {
            p[(i, l as usize)] -= 1.0;
        }
        (loss, self.scatter(&x, &p))
    }

    fn hvp(&self, theta: &Vector, v: &Vector, batch: &Batch) -> Option<Vector> {
        let (x, y) = self.select(batch);
        let (p, _) = Self::softmax(&self.logits(theta, &x), &y);
        let z = self.logits(v, &x);
        let mut r = Matrix::zeros(x.nrows(), self.classes);
        for i in 0..x.nrows() {
            let pz = p.row(i).dot(&z.row(i));
            for c in 0..self.classes {
                r[(i, c)] = p[(i, c)] * (z[(i, c)] - pz);
            }
        }
        Some(self.scatter(&x, &r))
    }

    fn sample_batch(&self, rng: &mut SeededRng) -> Batch {
        if self.batch_size >= self.y.len() {
            Batch::Full
        } else {
            sampled(rng)
        }
    }
}
