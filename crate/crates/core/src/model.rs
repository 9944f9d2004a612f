//! Embedding, masked mean, tanh hidden layer, linear output.
//!
//! ```text
//! embedded[i] = E[ids[i]] + offset[i]
//! pooled      = sum_i mask[i] * embedded[i] / max(1, sum_i mask[i])
//! hidden      = tanh(pooled . W1 + b1)
//! logits      = hidden . W2 + b2
//! ```
//!
//! Backward passes return gradients for every parameter and for the
//! embedded token vectors, which is where adversarial offsets are injected.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tokenizer::{EncodedText, PAD};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("class_count", self.class_count),
            ("max_len", self.max_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::invalid(format!("{name} does not fit in u32")));
            }
        }
        Ok(())
    }

    fn same_shape(&self, other: &ModelConfig) -> bool {
        self.vocab_size == other.vocab_size
            && self.embed_dim == other.embed_dim
            && self.hidden_dim == other.hidden_dim
            && self.class_count == other.class_count
            && self.max_len == other.max_len
    }
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: ModelConfig,
    /// `V x d`; row [`PAD`] is pinned to zero.
    pub embedding: Matrix,
    /// `d x h`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `h x C`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

const INIT_RANGE: f64 = 0.1;

fn draw_open(rng: &mut SeededRng) -> f64 {
    loop {
        let v = rng.uniform(-INIT_RANGE, INIT_RANGE);
        if v != -INIT_RANGE {
            return v;
        }
    }
}

/// Uniform(-0.1, 0.1) initialization from `config.seed`, drawn in the order
/// E, W1, b1, W2, b2 (row-major). The PAD row is zeroed afterwards.
pub fn init_params(config: &ModelConfig) -> Result<Parameters> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let mut fill = |n: usize| -> Vec<f64> { (0..n).map(|_| draw_open(&mut rng)).collect() };
    let (v, d, h, c) = (
        config.vocab_size,
        config.embed_dim,
        config.hidden_dim,
        config.class_count,
    );
    let mut embedding = Matrix::from_vec(v, d, fill(v * d))?;
    let w1 = Matrix::from_vec(d, h, fill(d * h))?;
    let b1 = fill(h);
    let w2 = Matrix::from_vec(h, c, fill(h * c))?;
    let b2 = fill(c);
    embedding.row_mut(PAD as usize).fill(0.0);
    Ok(Parameters {
        config: *config,
        embedding,
        w1,
        b1,
        w2,
        b2,
    })
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    /// `L x d`, offset already added.
    pub embedded: Matrix,
    pub pooled: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

impl Parameters {
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.embedding.as_slice(),
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.embedding.as_mut_slice(),
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &EncodedText, offset: Option<&Matrix>) -> Result<()> {
        let cfg = &self.config;
        if input.ids.len() != cfg.max_len || input.mask.len() != cfg.max_len {
            return Err(Error::Shape(format!(
                "input has {} ids / {} mask entries, model expects {}",
                input.ids.len(),
                input.mask.len(),
                cfg.max_len
            )));
        }
        for (i, (&id, &m)) in input.ids.iter().zip(&input.mask).enumerate() {
            if id as usize >= cfg.vocab_size {
                return Err(Error::invalid(format!(
                    "token id {id} at position {i} is outside vocabulary of size {}",
                    cfg.vocab_size
                )));
            }
            if m != (id != PAD) {
                return Err(Error::invalid(format!("mask disagrees with ids at position {i}")));
            }
        }
        if let Some(off) = offset {
            if off.rows() != cfg.max_len || off.cols() != cfg.embed_dim {
                return Err(Error::Shape(format!(
                    "offset is {}x{}, expected {}x{}",
                    off.rows(),
                    off.cols(),
                    cfg.max_len,
                    cfg.embed_dim
                )));
            }
            for (i, &m) in input.mask.iter().enumerate() {
                if !m && off.row(i).iter().any(|&v| v != 0.0) {
                    return Err(Error::invalid(format!("offset row {i} is nonzero at a PAD position")));
                }
            }
        }
        Ok(())
    }
}

pub fn forward(params: &Parameters, input: &EncodedText, offset: Option<&Matrix>) -> Result<(Vec<f64>, ForwardCache)> {
    params.check_input(input, offset)?;
    let cfg = &params.config;
    let (d, h, c) = (cfg.embed_dim, cfg.hidden_dim, cfg.class_count);

    let mut embedded = Matrix::zeros(input.len(), d);
    for (i, &id) in input.ids.iter().enumerate() {
        let src = params.embedding.row(id as usize);
        let dst = embedded.row_mut(i);
        match offset {
            Some(off) => {
                for ((o, &e), &delta) in dst.iter_mut().zip(src).zip(off.row(i)) {
                    *o = e + delta;
                }
            }
            None => dst.copy_from_slice(src),
        }
    }

    let count = input.mask.iter().filter(|&&m| m).count();
    let mut pooled = vec![0.0; d];
    for (i, _) in input.mask.iter().enumerate().filter(|(_, &m)| m) {
        for (p, &e) in pooled.iter_mut().zip(embedded.row(i)) {
            *p += e;
        }
    }
    let denom = count.max(1) as f64;
    for p in &mut pooled {
        *p /= denom;
    }

    let mut pre_activation = params.b1.clone();
    for (k, &p) in pooled.iter().enumerate() {
        for (z, &w) in pre_activation.iter_mut().zip(params.w1.row(k)) {
            *z += p * w;
        }
    }
    let hidden: Vec<f64> = pre_activation.iter().map(|z| z.tanh()).collect();

    let mut logits = params.b2.clone();
    for (j, &a) in hidden.iter().enumerate() {
        for (l, &w) in logits.iter_mut().zip(params.w2.row(j)) {
            *l += a * w;
        }
    }
    debug_assert_eq!(logits.len(), c);
    debug_assert_eq!(hidden.len(), h);

    let cache = ForwardCache {
        ids: input.ids.clone(),
        mask: input.mask.clone(),
        embedded,
        pooled,
        pre_activation,
        hidden,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `log sum_c exp(z_c - m) + m - z_label`, `m = max_c z_c`.
pub fn loss(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln() + m;
    lse - logits[label]
}

/// Embedding-table gradient, stored only for rows that received gradient.
pub type EmbeddingGrad = BTreeMap<u32, Vec<f64>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: EmbeddingGrad,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// `L x d` gradient w.r.t. the embedded token vectors; zero at PAD rows.
    pub d_embedded: Matrix,
}

impl Gradients {
    /// `a * self + b * other`, parameter fields only. `d_embedded` keeps
    /// `self`'s value.
    pub fn mix(&self, a: f64, other: &Gradients, b: f64) -> Gradients {
        let lin = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(&u, &v)| a * u + b * v).collect() };
        let mut embedding = EmbeddingGrad::new();
        for (&row, g) in &self.embedding {
            embedding.insert(row, g.iter().map(|&u| a * u).collect());
        }
        for (&row, g) in &other.embedding {
            match embedding.get_mut(&row) {
                Some(e) => {
                    let base = &self.embedding[&row];
                    *e = lin(base, g);
                }
                None => {
                    embedding.insert(row, g.iter().map(|&v| b * v).collect());
                }
            }
        }
        Gradients {
            embedding,
            w1: Matrix {
                rows: self.w1.rows,
                cols: self.w1.cols,
                data: lin(&self.w1.data, &other.w1.data),
            },
            b1: lin(&self.b1, &other.b1),
            w2: Matrix {
                rows: self.w2.rows,
                cols: self.w2.cols,
                data: lin(&self.w2.data, &other.w2.data),
            },
            b2: lin(&self.b2, &other.b2),
            d_embedded: self.d_embedded.clone(),
        }
    }

    /// Embedding gradient as a dense `V x d` matrix.
    pub fn embedding_dense(&self, vocab_size: usize, embed_dim: usize) -> Matrix {
        let mut m = Matrix::zeros(vocab_size, embed_dim);
        for (&row, g) in &self.embedding {
            m.row_mut(row as usize).copy_from_slice(g);
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.values().all(|g| g.iter().all(|v| v.is_finite()))
            && [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
                .iter()
                .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Exact gradients of `loss(forward(..), label)`.
pub fn backward(params: &Parameters, cache: &ForwardCache, label: usize) -> Result<Gradients> {
    let cfg = &params.config;
    let (d, h, c) = (cfg.embed_dim, cfg.hidden_dim, cfg.class_count);
    if label >= c {
        return Err(Error::invalid(format!("label {label} outside [0, {c})")));
    }
    if cache.logits.len() != c || cache.pooled.len() != d || cache.hidden.len() != h {
        return Err(Error::Shape("forward cache does not match parameters".into()));
    }

    let mut d_logits = softmax(&cache.logits);
    d_logits[label] -= 1.0;

    let mut w2 = Matrix::zeros(h, c);
    for (j, &a) in cache.hidden.iter().enumerate() {
        for (g, &dl) in w2.row_mut(j).iter_mut().zip(&d_logits) {
            *g = a * dl;
        }
    }
    let b2 = d_logits.clone();

    let d_pre: Vec<f64> = (0..h)
        .map(|j| {
            let d_hidden: f64 = params.w2.row(j).iter().zip(&d_logits).map(|(&w, &dl)| w * dl).sum();
            let a = cache.hidden[j];
            d_hidden * (1.0 - a * a)
        })
        .collect();

    let mut w1 = Matrix::zeros(d, h);
    for (k, &p) in cache.pooled.iter().enumerate() {
        for (g, &dz) in w1.row_mut(k).iter_mut().zip(&d_pre) {
            *g = p * dz;
        }
    }
    let b1 = d_pre.clone();

    let d_pooled: Vec<f64> = (0..d)
        .map(|k| params.w1.row(k).iter().zip(&d_pre).map(|(&w, &dz)| w * dz).sum())
        .collect();

    let count = cache.token_count();
    let mut d_embedded = Matrix::zeros(cache.mask.len(), d);
    let mut embedding = EmbeddingGrad::new();
    if count > 0 {
        let share: Vec<f64> = d_pooled.iter().map(|&g| g / count as f64).collect();
        for (i, &id) in cache.ids.iter().enumerate() {
            if !cache.mask[i] {
                continue;
            }
            d_embedded.row_mut(i).copy_from_slice(&share);
            let row = embedding.entry(id).or_insert_with(|| vec![0.0; d]);
            for (r, &s) in row.iter_mut().zip(&share) {
                *r += s;
            }
        }
    }

    Ok(Gradients {
        embedding,
        w1,
        b1,
        w2,
        b2,
        d_embedded,
    })
}

/// Class probabilities for one input.
pub fn predict_proba(params: &Parameters, input: &EncodedText) -> Result<Vec<f64>> {
    let (logits, _) = forward(params, input, None)?;
    Ok(softmax(&logits))
}

const MAGIC: &[u8; 4] = b"ADVT";
const FORMAT_VERSION: u32 = 1;

impl Parameters {
    /// Binary layout: `"ADVT"`, version, V, d, h, C, L (u32 LE), then E, W1,
    /// b1, W2, b2 as row-major f64 LE.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let cfg = &self.config;
        w.write_all(MAGIC)?;
        for v in [
            FORMAT_VERSION,
            cfg.vocab_size as u32,
            cfg.embed_dim as u32,
            cfg.hidden_dim as u32,
            cfg.class_count as u32,
            cfg.max_len as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for t in self.tensors() {
            for v in t {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a parameter file. `seed` is not part of the format and is taken
    /// from the caller.
    pub fn read_from(mut r: impl Read, seed: u64) -> Result<Self> {
        let bad = |m: &str| Error::BadParameterFile(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut header = [0u32; 6];
        for v in &mut header {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
            *v = u32::from_le_bytes(b);
        }
        if header[0] != FORMAT_VERSION {
            return Err(Error::BadParameterFile(format!("unsupported version {}", header[0])));
        }
        let config = ModelConfig {
            vocab_size: header[1] as usize,
            embed_dim: header[2] as usize,
            hidden_dim: header[3] as usize,
            class_count: header[4] as usize,
            max_len: header[5] as usize,
            seed,
        };
        config.validate()?;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b).map_err(|_| bad("truncated tensor data"))?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        let (v, d, h, c) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.class_count,
        );
        let embedding = Matrix::from_vec(v, d, read_vec(v * d)?)?;
        let w1 = Matrix::from_vec(d, h, read_vec(d * h)?)?;
        let b1 = read_vec(h)?;
        let w2 = Matrix::from_vec(h, c, read_vec(h * c)?)?;
        let b2 = read_vec(c)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|_| bad("read error"))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Parameters {
            config,
            embedding,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let params = Self::read_from(bytes.as_slice(), expected.seed)?;
        if !params.config.same_shape(expected) {
            return Err(Error::BadParameterFile(format!(
                "{} has shape {:?}, expected {:?}",
                path.display(),
                params.config,
                expected
            )));
        }
        Ok(params)
    }
}
