//! LIBSVM text I/O, seeded train/test splitting and the synthetic noisy stream generator.
//!
//! Files use 1-based feature indices; everything in memory is 0-based. Labels `+1`/`1` map to
//! [`Label::Pos`] and `-1`/`0` to [`Label::Neg`].

use std::fs::File;
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WatError};
use crate::sparse::{Label, SparseVector};

/// One labelled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: SparseVector,
    pub y: Label,
}

/// An in-memory dataset with its logical dimension.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub dim: usize,
}

impl Dataset {
    /// Wraps examples, taking `dim` as the dimension or `max index + 1` when `None`.
    pub fn new(examples: Vec<Example>, dim: Option<usize>) -> Result<Self> {
        let extent = examples
            .iter()
            .filter_map(|e| e.x.max_index())
            .max()
            .map_or(0, |m| m + 1);
        let dim = match dim {
            Some(d) if d < extent => {
                return Err(WatError::InvalidParameter(format!(
                    "declared dimension {d} is smaller than the observed extent {extent}"
                )))
            }
            Some(d) => d,
            None => extent,
        };
        Ok(Self { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> WatError {
    WatError::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_label(tok: &str, line_no: usize) -> Result<Label> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line_no, format!("unparseable label {tok:?}")))?;
    if v == 1.0 {
        Ok(Label::Pos)
    } else if v == -1.0 || v == 0.0 {
        Ok(Label::Neg)
    } else {
        Err(parse_err(
            line_no,
            format!("label {tok:?} is not one of +1, 1, -1, 0"),
        ))
    }
}

/// Parses one `<label> <idx>:<val> ...` line. `line_no` is only used in error messages.
///
/// Anything after a `#` is ignored.
pub fn parse_libsvm_line(line: &str, line_no: usize) -> Result<Example> {
    let body = line.split('#').next().unwrap_or("");
    let mut toks = body.split_ascii_whitespace();
    let label_tok = toks
        .next()
        .ok_or_else(|| parse_err(line_no, "missing label"))?;
    let y = parse_label(label_tok, line_no)?;

    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut prev: Option<usize> = None;
    for tok in toks {
        let (i, v) = tok
            .split_once(':')
            .ok_or_else(|| parse_err(line_no, format!("malformed token {tok:?}")))?;
        let idx: usize = i
            .parse()
            .map_err(|_| parse_err(line_no, format!("malformed index in {tok:?}")))?;
        let val: f64 = v
            .parse()
            .map_err(|_| parse_err(line_no, format!("malformed value in {tok:?}")))?;
        if idx == 0 {
            return Err(parse_err(line_no, "feature indices are 1-based"));
        }
        if !val.is_finite() {
            return Err(parse_err(line_no, format!("non-finite value in {tok:?}")));
        }
        if let Some(p) = prev {
            if idx <= p {
                return Err(parse_err(
                    line_no,
                    format!("index {idx} is not greater than previous index {p}"),
                ));
            }
        }
        prev = Some(idx);
        if val != 0.0 {
            indices.push(idx - 1);
            values.push(val);
        }
    }
    let x = SparseVector::from_pairs(indices.into_iter().zip(values))
        .map_err(|e| parse_err(line_no, e.to_string()))?;
    Ok(Example { x, y })
}

/// Streaming reader yielding one example per non-blank line.
pub struct LibsvmReader<R> {
    inner: R,
    buf: String,
    line_no: usize,
}

impl<R: BufRead> LibsvmReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: String::new(),
            line_no: 0,
        }
    }

    /// Number of lines consumed so far.
    pub fn lines_read(&self) -> usize {
        self.line_no
    }
}

impl LibsvmReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: BufRead> Iterator for LibsvmReader<R> {
    type Item = Result<Example>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    if self.buf.trim().is_empty() {
                        continue;
                    }
                    return Some(parse_libsvm_line(&self.buf, self.line_no));
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

/// Reads a whole LIBSVM file into memory.
pub fn read_libsvm(path: impl AsRef<Path>, dim: Option<usize>) -> Result<Dataset> {
    let examples = LibsvmReader::open(path)?.collect::<Result<Vec<_>>>()?;
    Dataset::new(examples, dim)
}

/// Writes examples in LIBSVM format with 1-based indices.
pub fn write_libsvm<'a, W, I>(mut out: W, examples: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Example>,
{
    for ex in examples {
        write!(out, "{}", ex.y)?;
        for (i, v) in ex.x.iter() {
            write!(out, " {}:{}", i + 1, v)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Size, dimension and sparsity summary of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_examples: usize,
    /// Highest 1-based feature index observed (0 when no features).
    pub max_index: usize,
    pub dim: usize,
    pub nnz: usize,
    pub sparsity: f64,
}

/// Single-pass statistics over a stream of examples.
///
/// `dim` overrides the dimension, which otherwise is the highest index + 1.
pub fn compute_stats<I>(examples: I, dim: Option<usize>) -> Result<DatasetStats>
where
    I: IntoIterator<Item = Result<Example>>,
{
    let mut n = 0usize;
    let mut nnz = 0usize;
    let mut extent = 0usize;
    for ex in examples {
        let ex = ex?;
        n += 1;
        nnz += ex.x.nnz();
        if let Some(m) = ex.x.max_index() {
            extent = extent.max(m + 1);
        }
    }
    if n == 0 {
        return Err(WatError::EmptyDataset);
    }
    let dim = match dim {
        Some(d) if d < extent => {
            return Err(WatError::InvalidParameter(format!(
                "declared dimension {d} is smaller than the observed extent {extent}"
            )))
        }
        Some(d) => d,
        None => extent,
    };
    if dim == 0 {
        return Err(WatError::InvalidParameter(
            "dataset has no features and no declared dimension".into(),
        ));
    }
    let sparsity = 1.0 - nnz as f64 / (n as f64 * dim as f64);
    Ok(DatasetStats {
        n_examples: n,
        max_index: extent,
        dim,
        nnz,
        sparsity,
    })
}

/// Seeded permutation of `0..n` split into a train prefix of `floor(fraction * n)` and the rest.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(WatError::InvalidParameter(format!(
            "train fraction {train_fraction} must lie in (0, 1)"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let n_train = (train_fraction * n as f64).floor() as usize;
    let test = perm.split_off(n_train);
    Ok((perm, test))
}

/// Train stream and test set produced by [`split_and_shuffle`].
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

/// Shuffles a dataset with `seed` and splits it into train and test parts.
pub fn split_and_shuffle(data: &Dataset, train_fraction: f64, seed: u64) -> Result<Split> {
    let (tr, te) = split_indices(data.len(), train_fraction, seed)?;
    let pick = |ix: Vec<usize>| ix.into_iter().map(|i| data.examples[i].clone()).collect();
    Ok(Split {
        train: pick(tr),
        test: pick(te),
    })
}

/// Byte-offset index over a LIBSVM file for random access without loading it.
pub struct IndexedLibsvm {
    file: BufReader<File>,
    offsets: Vec<u64>,
    line_numbers: Vec<usize>,
    buf: String,
}

impl IndexedLibsvm {
    /// First pass: records the offset of each non-blank line.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut offsets = Vec::new();
        let mut line_numbers = Vec::new();
        let mut pos = 0u64;
        let mut line = Vec::new();
        let mut line_no = 0usize;
        loop {
            line.clear();
            let read = reader.read_until(b'\n', &mut line)?;
            if read == 0 {
                break;
            }
            line_no += 1;
            if line.iter().any(|b| !b.is_ascii_whitespace()) {
                offsets.push(pos);
                line_numbers.push(line_no);
            }
            pos += read as u64;
        }
        Ok(Self {
            file: reader,
            offsets,
            line_numbers,
            buf: String::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Reads the `i`-th example.
    pub fn get(&mut self, i: usize) -> Result<Example> {
        let off = *self
            .offsets
            .get(i)
            .ok_or_else(|| WatError::InvalidParameter(format!("example {i} out of range")))?;
        self.file.seek(SeekFrom::Start(off))?;
        self.buf.clear();
        self.file.read_line(&mut self.buf)?;
        parse_libsvm_line(&self.buf, self.line_numbers[i])
    }

    /// Reads the examples at `order`, in that order.
    pub fn read_in_order(&mut self, order: &[usize]) -> Result<Vec<Example>> {
        order.iter().map(|&i| self.get(i)).collect()
    }
}

/// Parameters of the synthetic noisy stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub n: usize,
    pub flip_prob: f64,
    /// Minimum `|w* . x|` of every accepted example.
    pub margin: f64,
    /// Fraction of nonzero features per example.
    pub density: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub const DEFAULT_DENSITY: f64 = 0.1;
    pub const DEFAULT_MARGIN: f64 = 0.05;

    pub fn new(dim: usize, n: usize, flip_prob: f64, seed: u64) -> Self {
        Self {
            dim,
            n,
            flip_prob,
            margin: Self::DEFAULT_MARGIN,
            density: Self::DEFAULT_DENSITY,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WatError::InvalidParameter(m));
        if self.dim < 2 {
            return bad(format!("dimension {} must be at least 2", self.dim));
        }
        if !(0.0..0.5).contains(&self.flip_prob) {
            return bad(format!("flip probability {} must lie in [0, 0.5)", self.flip_prob));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin {} must be finite and non-negative", self.margin));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad(format!("density {} must lie in (0, 1]", self.density));
        }
        Ok(())
    }

    fn nnz_per_example(&self) -> usize {
        ((self.density * self.dim as f64).round() as usize).clamp(1, self.dim)
    }
}

/// A generated example together with its pre-noise label.
#[derive(Debug, Clone)]
pub struct NoisyExample {
    pub example: Example,
    pub clean: Label,
}

impl NoisyExample {
    pub fn flipped(&self) -> bool {
        self.example.y != self.clean
    }
}

const MAX_REJECTIONS: usize = 100_000;

/// Unbounded i.i.d. stream around a hidden unit vector.
///
/// Features are Gaussian on a uniformly chosen support; examples closer than `margin` to the
/// hidden hyperplane are rejected; surviving labels flip with probability `flip_prob`.
pub struct SyntheticStream {
    cfg: SynthConfig,
    hidden: Vec<f64>,
    rng: ChaCha8Rng,
}

impl SyntheticStream {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut hidden: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = hidden.iter().map(|v| v * v).sum::<f64>().sqrt();
        hidden.iter_mut().for_each(|v| *v /= norm);
        Ok(Self { cfg, hidden, rng })
    }

    /// The hidden separating direction.
    pub fn hidden(&self) -> &[f64] {
        &self.hidden
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    pub fn next_example(&mut self) -> Result<NoisyExample> {
        let k = self.cfg.nnz_per_example();
        for _ in 0..MAX_REJECTIONS {
            let mut support = rand::seq::index::sample(&mut self.rng, self.cfg.dim, k).into_vec();
            support.sort_unstable();
            let pairs: Vec<(usize, f64)> = support
                .into_iter()
                .map(|i| (i, self.rng.sample::<f64, _>(StandardNormal)))
                .collect();
            let score: f64 = pairs.iter().map(|&(i, v)| self.hidden[i] * v).sum();
            if score.abs() < self.cfg.margin || score == 0.0 {
                continue;
            }
            let clean = Label::from_sign(score);
            let u: f64 = self.rng.sample(Open01);
            let y = if u < self.cfg.flip_prob {
                clean.flipped()
            } else {
                clean
            };
            let x = SparseVector::from_pairs(pairs)?;
            return Ok(NoisyExample {
                example: Example { x, y },
                clean,
            });
        }
        Err(WatError::InvalidParameter(format!(
            "margin {} is unattainable for this dimension and density",
            self.cfg.margin
        )))
    }
}

/// A finite synthetic dataset with its clean labels and hidden direction.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset,
    pub clean_labels: Vec<Label>,
    pub hidden: Vec<f64>,
}

impl SynthData {
    pub fn flipped_count(&self) -> usize {
        self.dataset
            .examples
            .iter()
            .zip(&self.clean_labels)
            .filter(|(e, c)| e.y != **c)
            .count()
    }
}

/// Generates `cfg.n` examples of the synthetic noisy stream.
pub fn synth_noisy_stream(cfg: &SynthConfig) -> Result<SynthData> {
    let mut stream = SyntheticStream::new(*cfg)?;
    let mut examples = Vec::with_capacity(cfg.n);
    let mut clean_labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let ne = stream.next_example()?;
        clean_labels.push(ne.clean);
        examples.push(ne.example);
    }
    Ok(SynthData {
        dataset: Dataset::new(examples, Some(cfg.dim))?,
        clean_labels,
        hidden: stream.hidden,
    })
}
