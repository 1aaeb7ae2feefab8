//! Delayed XOR: a tanh RNN must output the XOR of two marked bits in a long
//! random sequence.
//!
//! Each step feeds two channels, a random `+-1` value bit and a `0/1` marker
//! flag. The first marker sits uniformly in the first half of the sequence,
//! the second uniformly in the second half.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::quadratic::random_orthogonal;
use super::{batch_rng, sampled, Batch, Problem};
use crate::error::{PsgdError, Result};
use crate::{Matrix, SeededRng, Vector};

const INPUTS: usize = 2;
/// Seed of the fixed batch that stands in for the full objective.
const EVAL_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, PartialEq)]
pub struct XorSequence {
    /// `+-1` value bits.
    pub values: Vec<f64>,
    pub markers: (usize, usize),
    pub label: u8,
}

/// `1` when the marked bits differ.
pub fn xor_label(a: bool, b: bool) -> u8 {
    (a != b) as u8
}

pub fn sample_sequence<R: Rng + ?Sized>(seq_len: usize, rng: &mut R) -> XorSequence {
    let values: Vec<f64> = (0..seq_len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let half = seq_len / 2;
    let markers = (rng.random_range(0..half), rng.random_range(half..seq_len));
    let label = xor_label(values[markers.0] > 0.0, values[markers.1] > 0.0);
    XorSequence { values, markers, label }
}

#[derive(Debug, Clone)]
pub struct XorTask {
    seq_len: usize,
    hidden: usize,
    batch_size: usize,
    init_scale: f64,
}

impl XorTask {
    pub fn new(seq_len: usize, hidden: usize, batch_size: usize) -> Result<Self> {
        if seq_len < 4 || hidden < 2 {
            return Err(PsgdError::InvalidConfig(format!(
                "xor needs seq_len >= 4 and hidden >= 2, got {seq_len}, {hidden}"
            )));
        }
        if batch_size == 0 {
            return Err(PsgdError::InvalidConfig("batch size 0".into()));
        }
        Ok(Self { seq_len, hidden, batch_size, init_scale: 0.1 })
    }

    /// Standard deviation of the initial input and output weights.
    pub fn with_init_scale(mut self, scale: f64) -> Self {
        self.init_scale = scale;
        self
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn w1_cols(&self) -> usize {
        INPUTS + self.hidden + 1
    }

    fn w2_offset(&self) -> usize {
        self.hidden * self.w1_cols()
    }

    pub fn batch(&self, batch: &Batch) -> Vec<XorSequence> {
        let seed = match batch {
            Batch::Full => EVAL_SEED,
            Batch::Sampled(s) => *s,
        };
        let mut rng = batch_rng(seed, 4);
        (0..self.batch_size).map(|_| sample_sequence(self.seq_len, &mut rng)).collect()
    }

    /// Splits `theta` into the input block `H x 2`, recurrent block `H x H`,
    /// hidden bias and the output weights.
    fn unpack(&self, theta: &Vector) -> (Matrix, Matrix, Vector, Vector) {
        let (h, cols) = (self.hidden, self.w1_cols());
        let w1 = Matrix::from_row_slice(h, cols, &theta.as_slice()[..self.w2_offset()]);
        let wx = w1.columns(0, INPUTS).into_owned();
        let wr = w1.columns(INPUTS, h).into_owned();
        let b = w1.column(INPUTS + h).into_owned();
        let w2 = Vector::from_column_slice(&theta.as_slice()[self.w2_offset()..]);
        (wx, wr, b, w2)
    }

    /// Inputs at each step as `2 x B` matrices.
    fn inputs(&self, seqs: &[XorSequence]) -> Vec<Matrix> {
        (0..self.seq_len)
            .map(|t| {
                Matrix::from_fn(INPUTS, seqs.len(), |c, i| {
                    let q = &seqs[i];
                    match c {
                        0 => q.values[t],
                        _ => (t == q.markers.0 || t == q.markers.1) as u8 as f64,
                    }
                })
            })
            .collect()
    }

    /// Hidden states `s_0 = 0, ..., s_T` (each `H x B`) and the outputs.
    fn forward(&self, theta: &Vector, xs: &[Matrix]) -> (Vec<Matrix>, Vector) {
        let (wx, wr, b, w2) = self.unpack(theta);
        let batch = xs[0].ncols();
        let mut states = Vec::with_capacity(self.seq_len + 1);
        states.push(Matrix::zeros(self.hidden, batch));
        for x in xs {
            let mut z = &wx * x;
            z.gemm(1.0, &wr, states.last().unwrap(), 1.0);
            for mut col in z.column_iter_mut() {
                col += &b;
                col.apply(|v| *v = v.tanh());
            }
            states.push(z);
        }
        let out = states.last().unwrap().tr_mul(&w2.rows(0, self.hidden)).add_scalar(w2[self.hidden]);
        (states, out)
    }

    fn sign(label: u8) -> f64 {
        if label == 1 {
            1.0
        } else {
            -1.0
        }
    }

    /// `log(1 + exp(-m))`, stable for large `|m|`.
    fn softplus_neg(m: f64) -> f64 {
        if m > 0.0 {
            (-m).exp().ln_1p()
        } else {
            -m + m.exp().ln_1p()
        }
    }

    /// Fraction of sequences in `batch` whose output sign matches the label.
    pub fn accuracy(&self, theta: &Vector, batch: &Batch) -> f64 {
        let seqs = self.batch(batch);
        let (_, out) = self.forward(theta, &self.inputs(&seqs));
        let hits = seqs.iter().zip(out.iter()).filter(|(q, o)| *o * Self::sign(q.label) > 0.0).count();
        hits as f64 / seqs.len() as f64
    }
}

impl Problem for XorTask {
    fn name(&self) -> &str {
        "xor"
    }

    fn dim(&self) -> usize {
        self.w2_offset() + self.hidden + 1
    }

    /// Random orthogonal recurrent block, Gaussian input and output weights,
    /// zero biases.
    fn init(&self, rng: &mut SeededRng) -> Vector {
        let normal = Normal::new(0.0, self.init_scale).unwrap();
        let (h, cols) = (self.hidden, self.w1_cols());
        let mut theta = Vector::zeros(self.dim());
        let rec = random_orthogonal(h, rng);
        for j in 0..h {
            for k in 0..INPUTS {
                theta[j * cols + k] = normal.sample(rng);
            }
            for k in 0..h {
                theta[j * cols + INPUTS + k] = rec[(j, k)];
            }
        }
        for j in 0..h {
            theta[self.w2_offset() + j] = normal.sample(rng);
        }
        theta
    }

    fn loss(&self, theta: &Vector, batch: &Batch) -> f64 {
        let seqs = self.batch(batch);
        let (_, out) = self.forward(theta, &self.inputs(&seqs));
        let total: f64 = seqs.iter().zip(out.iter()).map(|(q, o)| Self::softplus_neg(Self::sign(q.label) * o)).sum();
        total / seqs.len() as f64
    }

    fn grad(&self, theta: &Vector, batch: &Batch) -> Vector {
        self.loss_grad(theta, batch).1
    }

    /// Backpropagation through time over the whole batch at once.
    fn loss_grad(&self, theta: &Vector, batch: &Batch) -> (f64, Vector) {
        let (h, cols) = (self.hidden, self.w1_cols());
        let seqs = self.batch(batch);
        let xs = self.inputs(&seqs);
        let (_, wr, _, w2) = self.unpack(theta);
        let (states, out) = self.forward(theta, &xs);
        let scale = 1.0 / seqs.len() as f64;
        let mut loss = 0.0;
        // d/dout log(1 + exp(-y out)) = -y sigmoid(-y out)
        let dout = Vector::from_fn(seqs.len(), |i, _| {
            let y = Self::sign(seqs[i].label);
            let m = y * out[i];
            loss += Self::softplus_neg(m);
            -y / (1.0 + m.exp()) * scale
        });
        let last = &states[self.seq_len];
        let w2h = w2.rows(0, h);
        let mut g2 = Vector::zeros(h + 1);
        g2.rows_mut(0, h).copy_from(&(last * &dout));
        g2[h] = dout.sum();
        let mut gx = Matrix::zeros(h, INPUTS);
        let mut gr = Matrix::zeros(h, h);
        let mut gb = Vector::zeros(h);
        let mut ds = w2h * dout.transpose();
        for t in (0..self.seq_len).rev() {
            let st = &states[t + 1];
            let dz = ds.zip_map(st, |d, s| d * (1.0 - s * s));
            gx.gemm(1.0, &dz, &xs[t].transpose(), 1.0);
            gr.gemm(1.0, &dz, &states[t].transpose(), 1.0);
            gb += dz.column_sum();
            ds = wr.tr_mul(&dz);
        }
        let mut g = Vector::zeros(self.dim());
        for j in 0..h {
            let row = &mut g.as_mut_slice()[j * cols..(j + 1) * cols];
            row[0] = gx[(j, 0)];
            row[1] = gx[(j, 1)];
            for k in 0..h {
                row[INPUTS + k] = gr[(j, k)];
            }
            row[INPUTS + h] = gb[j];
        }
        g.rows_mut(self.w2_offset(), h + 1).copy_from(&g2);
        (loss * scale, g)
    }

    fn sample_batch(&self, rng: &mut SeededRng) -> Batch {
        sampled(rng)
    }

    fn is_solved(&self, loss: f64) -> bool {
        loss < 0.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbeds::check;
    use rand::SeedableRng;

    #[test]
    fn truth_table() {
        assert_eq!(xor_label(true, true), 0);
        assert_eq!(xor_label(true, false), 1);
        assert_eq!(xor_label(false, true), 1);
        assert_eq!(xor_label(false, false), 0);
    }

    #[test]
    fn two_markers_in_separate_halves() {
        let mut rng = SeededRng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = sample_sequence(9, &mut rng);
            assert!(q.markers.0 < 4 && (4..9).contains(&q.markers.1));
            assert_eq!(q.label, xor_label(q.values[q.markers.0] > 0.0, q.values[q.markers.1] > 0.0));
        }
    }

    #[test]
    fn labels_are_balanced() {
        let mut rng = SeededRng::seed_from_u64(2);
        let ones: usize = (0..10_000).map(|_| sample_sequence(32, &mut rng).label as usize).sum();
        let rate = ones as f64 / 1e4;
        assert!((0.45..=0.55).contains(&rate), "{rate}");
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let task = XorTask::new(8, 5, 6).unwrap().with_init_scale(0.8);
        let mut rng = SeededRng::seed_from_u64(3);
        for _ in 0..3 {
            let theta = task.init(&mut rng);
            check::grad_fd(&task, &theta, &Batch::Sampled(rng.random()), 1e-5);
        }
    }

    #[test]
    fn rejects_small_sizes() {
        assert!(XorTask::new(3, 8, 4).is_err());
        assert!(XorTask::new(8, 1, 4).is_err());
        assert_eq!(XorTask::new(4, 8, 1).unwrap().dim(), 8 * 11 + 9);
    }
}
