use std::rc::Rc;

use ndarray::Array1;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Linear, Mat, ParamSet, Var};

/// Tokens per attention chunk; sentences never straddle chunks.
const CHUNK_TOKENS: usize = 256;
const MASKED: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub blocks: usize,
    /// Hidden width of each block's feed-forward layer; 0 means twice the input width.
    pub ff_hidden: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self { blocks: 3, ff_hidden: 0 }
    }
}

#[derive(Clone, Debug)]
struct FeedForward {
    inner: Linear,
    outer: Linear,
}

/// Stack of single-head self-attention blocks where queries, keys and
/// values are the block input itself, each followed by a residual
/// feed-forward layer.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    dim: usize,
    blocks: Vec<FeedForward>,
}

/// Per-block token matrices and the pooled sentence vector.
#[derive(Clone, Debug)]
pub struct TextEncoding {
    pub blocks: Vec<Mat>,
    pub pooled: Array1<f64>,
}

impl TextEncoder {
    pub fn new(p: &mut ParamSet, rng: &mut impl Rng, name: &str, dim: usize, config: &TextEncoderConfig) -> Result<Self> {
        if config.blocks == 0 || dim == 0 {
            return Err(Error::Parameter(format!("text encoder needs blocks ≥ 1 and dim ≥ 1, got {config:?}")));
        }
        let hidden = if config.ff_hidden == 0 { 2 * dim } else { config.ff_hidden };
        let blocks = (0..config.blocks)
            .map(|j| FeedForward {
                inner: Linear::new(p, rng, &format!("{name}.block{j}.ff1"), dim, hidden),
                outer: Linear::new(p, rng, &format!("{name}.block{j}.ff2"), hidden, dim),
            })
            .collect();
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn block(&self, g: &mut Graph, p: &ParamSet, j: usize, e: Var, mask: Option<Var>) -> Var {
        let scores = g.matmul_t(e, e);
        let scores = g.affine(scores, 1.0 / (self.dim as f64).sqrt(), 0.0);
        let scores = match mask {
            Some(m) => g.add(scores, m),
            None => scores,
        };
        let attn = g.softmax_rows(scores);
        let ctx = g.matmul(attn, e);
        let z = g.add(e, ctx);
        let ff = &self.blocks[j];
        let h = ff.inner.forward(g, p, z);
        let h = g.relu(h);
        let h = ff.outer.forward(g, p, h);
        g.add(z, h)
    }

    /// Runs every block over one chunk of packed sentences; returns block outputs.
    fn run_chunk(&self, g: &mut Graph, p: &ParamSet, tokens: Var, lengths: &[usize]) -> Vec<Var> {
        let total: usize = lengths.iter().sum();
        let mask = (lengths.len() > 1).then(|| {
            let mut owner = Vec::with_capacity(total);
            for (s, &l) in lengths.iter().enumerate() {
                owner.extend(std::iter::repeat_n(s, l));
            }
            g.constant(Mat::from_shape_fn((total, total), |(r, c)| {
                if owner[r] == owner[c] {
                    0.0
                } else {
                    MASKED
                }
            }))
        });
        let mut e = tokens;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for j in 0..self.blocks.len() {
            e = self.block(g, p, j, e, mask);
            outs.push(e);
        }
        outs
    }

    /// Encodes sentences packed as consecutive rows of `tokens`
    /// (`lengths[i]` rows each) and returns one pooled row per sentence.
    pub fn forward(&self, g: &mut Graph, p: &ParamSet, tokens: Var, lengths: &[usize]) -> Result<Var> {
        if let Some(i) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::Empty(format!("sentence {i} has no tokens")));
        }
        let (rows, cols) = g.shape(tokens);
        if cols != self.dim || rows != lengths.iter().sum::<usize>() {
            return Err(Error::Dimension(format!(
                "token matrix {rows}x{cols} does not match {} tokens of width {}",
                lengths.iter().sum::<usize>(),
                self.dim
            )));
        }
        let mut pooled_chunks = Vec::new();
        let mut start = 0;
        let mut first = 0;
        while first < lengths.len() {
            let mut last = first;
            let mut n = 0;
            while last < lengths.len() && (last == first || n + lengths[last] <= CHUNK_TOKENS) {
                n += lengths[last];
                last += 1;
            }
            let chunk_tokens = if first == 0 && last == lengths.len() {
                tokens
            } else {
                g.gather_rows(tokens, Rc::new((start..start + n).collect()))
            };
            let lens = &lengths[first..last];
            let outs = self.run_chunk(g, p, chunk_tokens, lens);
            pooled_chunks.push(pool_blocks(g, &outs, lens));
            start += n;
            first = last;
        }
        Ok(if pooled_chunks.len() == 1 {
            pooled_chunks[0]
        } else {
            g.concat_rows(&pooled_chunks)
        })
    }

    /// Encodes one sentence and keeps every block's token matrix.
    pub fn encode(&self, p: &ParamSet, tokens: &Mat) -> Result<TextEncoding> {
        if tokens.nrows() == 0 {
            return Err(Error::Empty("sentence has no tokens".into()));
        }
        if tokens.ncols() != self.dim {
            return Err(Error::Dimension(format!("expected width {}, got {}", self.dim, tokens.ncols())));
        }
        let mut g = Graph::new();
        let x = g.constant(tokens.clone());
        let outs = self.run_chunk(&mut g, p, x, &[tokens.nrows()]);
        let pooled = pool_blocks(&mut g, &outs, &[tokens.nrows()]);
        Ok(TextEncoding {
            blocks: outs.iter().map(|&v| g.value(v).clone()).collect(),
            pooled: g.value(pooled).row(0).to_owned(),
        })
    }

    /// Attention matrix of block `j` for a single sentence.
    pub fn attention(&self, p: &ParamSet, tokens: &Mat, j: usize) -> Mat {
        let mut g = Graph::new();
        let mut e = g.constant(tokens.clone());
        for k in 0..j {
            e = self.block(&mut g, p, k, e, None);
        }
        let s = g.matmul_t(e, e);
        let s = g.affine(s, 1.0 / (self.dim as f64).sqrt(), 0.0);
        let a = g.softmax_rows(s);
        g.value(a).clone()
    }
}

/// Token mean inside each block, then mean across blocks.
fn pool_blocks(g: &mut Graph, blocks: &[Var], lengths: &[usize]) -> Var {
    let mut offsets = Vec::with_capacity(lengths.len() + 1);
    offsets.push(0);
    for &l in lengths {
        offsets.push(offsets.last().unwrap() + l);
    }
    let offsets = Rc::new(offsets);
    let means: Vec<Var> = blocks.iter().map(|&b| g.segment_mean(b, Rc::clone(&offsets))).collect();
    let mut acc = means[0];
    for &m in &means[1..] {
        acc = g.add(acc, m);
    }
    g.affine(acc, 1.0 / blocks.len() as f64, 0.0)
}

/// Pooling applied to already computed block outputs of one sentence.
pub fn pool_block_outputs(blocks: &[Mat]) -> Array1<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = blocks.iter().map(|b| g.constant(b.clone())).collect();
    let out = pool_blocks(&mut g, &vars, &[blocks[0].nrows()]);
    g.value(out).row(0).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_input_grad, max_param_relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
        Mat::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    fn encoder(dim: usize, seed: u64) -> (TextEncoder, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let enc = TextEncoder::new(&mut p, &mut rng, "txt", dim, &TextEncoderConfig::default()).unwrap();
        (enc, p)
    }

    #[test]
    fn identical_blocks_pool_to_token_mean() {
        let x = Mat::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 3.0, 4.0, 5.0]).unwrap();
        let pooled = pool_block_outputs(&[x.clone(), x.clone(), x]);
        assert_eq!(pooled.to_vec(), vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_token_block_is_feed_forward_of_residual() {
        let (enc, p) = encoder(4, 1);
        let tok = Mat::from_shape_vec((1, 4), vec![0.3, -0.2, 0.5, 0.1]).unwrap();
        let out = enc.encode(&p, &tok).unwrap();
        // attention over one position returns it, so z = 2·x
        let mut g = Graph::new();
        let z = g.constant(&tok * 2.0);
        let ff = &enc.blocks[0];
        let h = ff.inner.forward(&mut g, &p, z);
        let h = g.relu(h);
        let h = ff.outer.forward(&mut g, &p, h);
        let want = g.add(z, h);
        let diff = (&out.blocks[0] - g.value(want)).mapv(f64::abs).sum();
        assert!(diff < 1e-12);
        assert_eq!(enc.block_count(), 3);
    }

    #[test]
    fn batched_forward_matches_single_sentences() {
        let (enc, p) = encoder(5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lens = [3usize, 1, 4];
        let sents: Vec<Mat> = lens.iter().map(|&l| rand_mat(&mut rng, l, 5)).collect();
        let views: Vec<_> = sents.iter().map(|m| m.view()).collect();
        let packed = ndarray::concatenate(ndarray::Axis(0), &views).unwrap();
        let mut g = Graph::new();
        let x = g.constant(packed);
        let out = enc.forward(&mut g, &p, x, &lens).unwrap();
        for (i, s) in sents.iter().enumerate() {
            let single = enc.encode(&p, s).unwrap().pooled;
            let batched = g.value(out).row(i).to_owned();
            assert!((&single - &batched).mapv(f64::abs).sum() < 1e-10);
        }
    }

    #[test]
    fn chunking_is_exact() {
        let (enc, p) = encoder(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lens: Vec<usize> = (0..120).map(|i| 1 + i % 5).collect();
        let total: usize = lens.iter().sum();
        assert!(total > CHUNK_TOKENS);
        let packed = rand_mat(&mut rng, total, 3);
        let mut g = Graph::new();
        let x = g.constant(packed.clone());
        let out = enc.forward(&mut g, &p, x, &lens).unwrap();
        assert_eq!(g.shape(out), (120, 3));
        let last = packed.slice(ndarray::s![total - 5.., ..]).to_owned();
        let single = enc.encode(&p, &last).unwrap().pooled;
        assert!((&single - &g.value(out).row(119)).mapv(f64::abs).sum() < 1e-10);
    }

    #[test]
    fn empty_sentence_rejected() {
        let (enc, p) = encoder(3, 0);
        assert!(enc.encode(&p, &Mat::zeros((0, 3))).is_err());
        let mut g = Graph::new();
        let x = g.constant(Mat::zeros((2, 3)));
        assert!(enc.forward(&mut g, &p, x, &[2, 0]).is_err());
    }

    #[test]
    fn attention_rows_are_distributions() {
        let (enc, p) = encoder(6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let l = rng.gen_range(1..6);
            let x = rand_mat(&mut rng, l, 6);
            for j in 0..3 {
                let a = enc.attention(&p, &x, j);
                for row in a.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                    assert!(row.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (enc, p) = encoder(4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_mat(&mut rng, 3, 4) * 0.5;
        let probe = rand_mat(&mut rng, 1, 4);
        check_input_grad(
            std::slice::from_ref(&x),
            |g, v| {
                let y = enc.forward(g, &p, v[0], &[3]).unwrap();
                let w = g.constant(probe.clone());
                let y = g.mul(y, w);
                g.mean_all(y)
            },
            1e-4,
        );
        let err = max_param_relative_error(&p, |g, ps| {
            let xv = g.constant(x.clone());
            let y = enc.forward(g, ps, xv, &[2, 1]).unwrap();
            let y = g.tanh(y);
            g.mean_all(y)
        });
        assert!(err < 1e-4, "{err}");
    }
}
