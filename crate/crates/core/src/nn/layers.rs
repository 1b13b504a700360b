use std::rc::Rc;

use rand::Rng;

use super::graph::{Graph, Mat, Var};
use super::params::{xavier, ParamId, ParamSet};

/// Affine map `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, name: &str, input: usize, output: usize) -> Self {
        let weight = params.add(format!("{name}.weight"), xavier(rng, input, output));
        let bias = params.add(format!("{name}.bias"), Mat::zeros((1, output)));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamSet, x: Var) -> Var {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

/// Variable-length sequences laid out as rows of a flat input matrix.
///
/// `rows[b][i]` is the input row for position `i` of sequence `b`.
#[derive(Clone, Debug)]
pub struct Sequences {
    rows: Vec<Vec<usize>>,
    offsets: Rc<Vec<usize>>,
}

impl Sequences {
    pub fn new(rows: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        for r in &rows {
            assert!(!r.is_empty(), "sequences must be non-empty");
            offsets.push(offsets.last().unwrap() + r.len());
        }
        Self {
            rows,
            offsets: Rc::new(offsets),
        }
    }

    /// Sequences whose rows are consecutive in the flat matrix.
    pub fn contiguous(lengths: &[usize]) -> Self {
        let mut next = 0;
        let rows = lengths
            .iter()
            .map(|&l| {
                let r: Vec<usize> = (next..next + l).collect();
                next += l;
                r
            })
            .collect();
        Self::new(rows)
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn len_of(&self, b: usize) -> usize {
        self.rows[b].len()
    }

    pub fn max_len(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Prefix offsets of the packed `(sequence, position)` layout.
    pub fn offsets(&self) -> Rc<Vec<usize>> {
        Rc::clone(&self.offsets)
    }

    /// Packed row index → sequence index.
    pub fn owners(&self) -> Vec<usize> {
        (0..self.count()).flat_map(|b| std::iter::repeat_n(b, self.len_of(b))).collect()
    }

    /// Flat input rows in packed order.
    pub fn packed_rows(&self) -> Vec<usize> {
        self.rows.iter().flatten().copied().collect()
    }
}

/// Gated recurrent unit with zero initial state.
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Self {
        let w_x = params.add(format!("{name}.w_x"), xavier(rng, input, 3 * hidden));
        let w_h = params.add(format!("{name}.w_h"), xavier(rng, hidden, 3 * hidden));
        let b_x = params.add(format!("{name}.b_x"), Mat::zeros((1, 3 * hidden)));
        let b_h = params.add(format!("{name}.b_h"), Mat::zeros((1, 3 * hidden)));
        Self {
            w_x,
            w_h,
            b_x,
            b_h,
            input,
            hidden,
        }
    }

    /// One step: reset/update gates then candidate state.
    pub fn step(&self, g: &mut Graph, p: &ParamSet, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let w_x = g.param(p, self.w_x);
        let w_h = g.param(p, self.w_h);
        let b_x = g.param(p, self.b_x);
        let b_h = g.param(p, self.b_h);
        let gx = g.matmul(x, w_x);
        let gx = g.add_row(gx, b_x);
        let gh = g.matmul(h, w_h);
        let gh = g.add_row(gh, b_h);

        let xr = g.slice_cols(gx, 0, hd);
        let xz = g.slice_cols(gx, hd, 2 * hd);
        let xn = g.slice_cols(gx, 2 * hd, 3 * hd);
        let hr = g.slice_cols(gh, 0, hd);
        let hz = g.slice_cols(gh, hd, 2 * hd);
        let hn = g.slice_cols(gh, 2 * hd, 3 * hd);

        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn);
        let n = g.add(xn, rn);
        let n = g.tanh(n);
        // h' = n + z ⊙ (h − n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        g.add(n, zd)
    }

    /// Runs every sequence, forward or reversed, and returns states in packed
    /// `(sequence, position)` order: row `offsets[b] + i` is the state after
    /// reading position `i` of sequence `b`.
    pub fn run(&self, g: &mut Graph, p: &ParamSet, inputs: Var, seqs: &Sequences, reverse: bool) -> Var {
        let batch = seqs.count();
        let steps = seqs.max_len();
        let mut h = g.constant(Mat::zeros((batch, self.hidden)));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let idx: Vec<usize> = (0..batch)
                .map(|b| {
                    let len = seqs.len_of(b);
                    if t < len {
                        let pos = if reverse { len - 1 - t } else { t };
                        seqs.rows[b][pos]
                    } else {
                        seqs.rows[b][0]
                    }
                })
                .collect();
            let x = g.gather_rows(inputs, Rc::new(idx));
            let h_new = self.step(g, p, x, h);
            let all_active = (0..batch).all(|b| t < seqs.len_of(b));
            h = if all_active {
                h_new
            } else {
                let mask = Mat::from_shape_fn((batch, 1), |(b, _)| if t < seqs.len_of(b) { 1.0 } else { 0.0 });
                let mask = g.constant(mask);
                let delta = g.sub(h_new, h);
                let delta = g.mul_col(delta, mask);
                g.add(h, delta)
            };
            states.push(h);
        }
        let stacked = g.concat_rows(&states);
        let mut packed = Vec::with_capacity(seqs.total());
        for b in 0..batch {
            let len = seqs.len_of(b);
            for i in 0..len {
                let step = if reverse { len - 1 - i } else { i };
                packed.push(step * batch + b);
            }
        }
        g.gather_rows(stacked, Rc::new(packed))
    }
}

/// Bidirectional GRU; per-position output is `[forward ; backward]`.
#[derive(Clone, Debug)]
pub struct BiGru {
    pub forward: Gru,
    pub backward: Gru,
}

impl BiGru {
    pub fn new(params: &mut ParamSet, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: Gru::new(params, rng, &format!("{name}.fwd"), input, hidden),
            backward: Gru::new(params, rng, &format!("{name}.bwd"), input, hidden),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    pub fn run(&self, g: &mut Graph, p: &ParamSet, inputs: Var, seqs: &Sequences) -> Var {
        let f = self.forward.run(g, p, inputs, seqs, false);
        let b = self.backward.run(g, p, inputs, seqs, true);
        g.concat_cols(&[f, b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::max_param_relative_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn packed_states_follow_sequence_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        let gru = Gru::new(&mut p, &mut rng, "gru", 3, 4);
        let seqs = Sequences::contiguous(&[2, 1, 3]);
        let mut g = Graph::new();
        let x = g.constant(Mat::from_shape_fn((6, 3), |(r, c)| (r * 3 + c) as f64 * 0.1));
        let out = gru.run(&mut g, &p, x, &seqs, false);
        assert_eq!(g.shape(out), (6, 4));

        // the single-position sequence equals one step from the zero state
        let mut g2 = Graph::new();
        let x1 = g2.constant(Mat::from_shape_fn((1, 3), |(_, c)| (2 * 3 + c) as f64 * 0.1));
        let h0 = g2.constant(Mat::zeros((1, 4)));
        let h1 = gru.step(&mut g2, &p, x1, h0);
        for c in 0..4 {
            assert!((g.value(out)[[2, c]] - g2.value(h1)[[0, c]]).abs() < 1e-15);
        }
    }

    #[test]
    fn reverse_run_reads_sequence_backwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        let gru = Gru::new(&mut p, &mut rng, "gru", 2, 3);
        let x = Mat::from_shape_fn((3, 2), |(r, c)| (r as f64 - 1.0) * 0.7 + c as f64 * 0.2);
        let flipped = Mat::from_shape_fn((3, 2), |(r, c)| x[[2 - r, c]]);

        let mut g = Graph::new();
        let xv = g.constant(x);
        let rev = gru.run(&mut g, &p, xv, &Sequences::contiguous(&[3]), true);
        let xf = g.constant(flipped);
        let fwd = gru.run(&mut g, &p, xf, &Sequences::contiguous(&[3]), false);
        // reverse state at position i == forward state over the flipped input at 2 - i
        for i in 0..3 {
            for c in 0..3 {
                assert!((g.value(rev)[[i, c]] - g.value(fwd)[[2 - i, c]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bigru_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamSet::new();
        let bi = BiGru::new(&mut p, &mut rng, "bi", 2, 3);
        let seqs = Sequences::contiguous(&[2, 1]);
        let x = Mat::from_shape_fn((3, 2), |(r, c)| 0.3 * r as f64 - 0.2 * c as f64 + 0.1);
        let err = max_param_relative_error(&p, |g, p| {
            let xv = g.constant(x.clone());
            let h = bi.run(g, p, xv, &seqs);
            let pooled = g.segment_mean(h, seqs.offsets());
            let sq = g.mul(pooled, pooled);
            g.mean_all(sq)
        });
        assert!(err < 1e-6, "{err}");
    }
}
