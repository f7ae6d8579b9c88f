//! Hard labels, sample confidence, synthetic label noise and the blob
//! datasets used for desk-scale experiments.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::{entropy, Matrix, ProbDist};
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

/// Class index known to be below the class count it was built against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HardLabel(usize);

impl HardLabel {
    pub fn new(index: usize, classes: usize) -> Result<Self> {
        if index >= classes {
            return Err(Error::invalid(format!(
                "label {index} out of range for {classes} classes"
            )));
        }
        Ok(Self(index))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for HardLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    #[serde(alias = "sym")]
    Symmetric,
    #[serde(alias = "pair_flip", alias = "pair")]
    PairFlip,
}

impl NoiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::PairFlip => "pairflip",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "pairflip" | "pair_flip" | "pair" => Ok(NoiseKind::PairFlip),
            other => Err(Error::invalid(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    pub rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Self { kind, rate, seed })
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// Corrupts `labels` according to this spec.
    pub fn apply(&self, labels: &[HardLabel], classes: usize) -> Result<Vec<HardLabel>> {
        let mut rng = rng_from_seed(self.seed);
        match self.kind {
            NoiseKind::Symmetric => inject_symmetric(labels, classes, self.rate, &mut rng),
            NoiseKind::PairFlip => inject_pairflip(labels, classes, self.rate, &mut rng),
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!("noise rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Features with clean and (possibly) corrupted labels.
///
/// Clean labels are kept for diagnostics only; training reads `noisy`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySplit<S> {
    pub features: Matrix<S>,
    pub clean: Vec<HardLabel>,
    pub noisy: Vec<HardLabel>,
    pub noise: NoiseSpec,
    pub classes: usize,
}

impl<S: Scalar> NoisySplit<S> {
    pub fn new(
        features: Matrix<S>,
        clean: Vec<HardLabel>,
        noisy: Vec<HardLabel>,
        noise: NoiseSpec,
        classes: usize,
    ) -> Result<Self> {
        let n = features.rows();
        if clean.len() != n || noisy.len() != n {
            return Err(Error::invalid(format!(
                "split has {n} rows but {} clean and {} noisy labels",
                clean.len(),
                noisy.len()
            )));
        }
        if clean.iter().chain(&noisy).any(|y| y.index() >= classes) {
            return Err(Error::invalid("label outside the class range"));
        }
        Ok(Self {
            features,
            clean,
            noisy,
            noise,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Re-draws the noisy labels from the clean ones.
    pub fn with_noise(mut self, noise: NoiseSpec) -> Result<Self> {
        self.noisy = noise.apply(&self.clean, self.classes)?;
        self.noise = noise;
        Ok(self)
    }

    pub fn flipped_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let flipped = self.clean.iter().zip(&self.noisy).filter(|(a, b)| a != b).count();
        flipped as f64 / self.len() as f64
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            clean: indices.iter().map(|&i| self.clean[i]).collect(),
            noisy: indices.iter().map(|&i| self.noisy[i]).collect(),
            noise: self.noise,
            classes: self.classes,
        }
    }
}

pub fn one_hot<S: Scalar>(y: HardLabel, classes: usize) -> Result<ProbDist<S>> {
    if y.index() >= classes {
        return Err(Error::invalid(format!("label {y} out of range for {classes} classes")));
    }
    let mut v = vec![S::zero(); classes];
    v[y.index()] = S::one();
    Ok(ProbDist::from_raw(v))
}

/// `l(p) = 1 − H(p)/ln C`, clamped to `[0, 1]`.
pub fn sample_confidence<S: Scalar>(p: &ProbDist<S>) -> S {
    if p.len() < 2 {
        return S::one();
    }
    let ln_c = S::count(p.len()).ln();
    (S::one() - entropy(p) / ln_c).max(S::zero()).min(S::one())
}

/// With probability `rate`, replaces each label by a uniform draw over the
/// other `C − 1` classes.
pub fn inject_symmetric<R: Rng + ?Sized>(
    labels: &[HardLabel],
    classes: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<HardLabel>> {
    check_rate(rate)?;
    if rate > 0.0 && classes < 2 {
        return Err(Error::invalid("symmetric noise needs at least two classes"));
    }
    labels
        .iter()
        .map(|&y| {
            if y.index() >= classes {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            if rng.random::<f64>() < rate {
                let k = rng.random_range(0..classes - 1);
                Ok(HardLabel(if k >= y.index() { k + 1 } else { k }))
            } else {
                Ok(y)
            }
        })
        .collect()
}

/// With probability `rate`, moves each label to its successor `(y + 1) mod C`.
pub fn inject_pairflip<R: Rng + ?Sized>(
    labels: &[HardLabel],
    classes: usize,
    rate: f64,
    rng: &mut R,
) -> Result<Vec<HardLabel>> {
    check_rate(rate)?;
    if classes < 2 {
        return Err(Error::invalid("pair-flip noise needs at least two classes"));
    }
    labels
        .iter()
        .map(|&y| {
            if y.index() >= classes {
                return Err(Error::invalid(format!("label {y} out of range")));
            }
            if rng.random::<f64>() < rate {
                Ok(HardLabel((y.index() + 1) % classes))
            } else {
                Ok(y)
            }
        })
        .collect()
}

/// Isotropic Gaussian clusters.
///
/// Class means are drawn from `N(0, I)`; each point is its class mean plus
/// `spread · N(0, I)`. Samples are interleaved by class (`label = i mod C`).
/// The result carries clean labels only.
pub fn make_blobs<S: Scalar>(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<NoisySplit<S>> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(Error::invalid(format!(
            "blobs need C >= 2, n >= 1 and d >= 1 (got C={classes}, n={per_class}, d={dim})"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::invalid("spread must be finite and non-negative"));
    }
    let mut mean_rng = rng_from_seed(derive_seed(seed, 0));
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut mean_rng)).collect())
        .collect();
    let mut point_rng = rng_from_seed(derive_seed(seed, 1));
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &m in &means[c] {
            let z: f64 = StandardNormal.sample(&mut point_rng);
            data.push(S::lit(m + spread * z));
        }
        labels.push(HardLabel(c));
    }
    NoisySplit::new(
        Matrix::from_vec(n, dim, data)?,
        labels.clone(),
        labels,
        NoiseSpec::none(),
        classes,
    )
}

/// Writes `f0,…,f{d−1},clean_label,noisy_label`.
pub fn write_csv<S: Scalar>(split: &NoisySplit<S>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..split.dim()).map(|j| format!("f{j}")).collect();
    header.push("clean_label".into());
    header.push("noisy_label".into());
    w.write_record(&header)?;
    for i in 0..split.len() {
        let mut rec: Vec<String> = split.features.row(i).iter().map(|v| v.as_f64().to_string()).collect();
        rec.push(split.clean[i].to_string());
        rec.push(split.noisy[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset CSV. The `noisy_label` column is optional; when absent
/// the noisy labels copy the clean ones. When `classes` is `None` the class
/// count is inferred as `max label + 1`.
pub fn read_csv<S: Scalar>(path: &Path, classes: Option<usize>) -> Result<NoisySplit<S>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let has_noisy = header.last().map(String::as_str) == Some("noisy_label");
    let label_cols = if has_noisy { 2 } else { 1 };
    if header.len() < label_cols + 1 {
        return Err(Error::invalid(format!("{}: too few columns", path.display())));
    }
    let dim = header.len() - label_cols;
    for (j, name) in header[..dim].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::invalid(format!(
                "{}: expected column f{j}, found `{name}`",
                path.display()
            )));
        }
    }
    if header[dim] != "clean_label" {
        return Err(Error::invalid(format!(
            "{}: expected clean_label column",
            path.display()
        )));
    }

    let mut data = Vec::new();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::invalid(format!(
                "{}: row {} has {} columns, expected {}",
                path.display(),
                line + 1,
                rec.len(),
                header.len()
            )));
        }
        for field in rec.iter().take(dim) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad number `{field}`", path.display())))?;
            data.push(S::lit(v));
        }
        let parse_label = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{}: bad label `{s}`", path.display())))
        };
        let c = parse_label(&rec[dim])?;
        clean.push(c);
        noisy.push(if has_noisy { parse_label(&rec[dim + 1])? } else { c });
    }
    let inferred = clean.iter().chain(&noisy).copied().max().map_or(0, |m| m + 1);
    let classes = classes.unwrap_or(inferred.max(2));
    let to_labels = |v: Vec<usize>| {
        v.into_iter()
            .map(|i| HardLabel::new(i, classes))
            .collect::<Result<Vec<_>>>()
    };
    let clean = to_labels(clean)?;
    let noisy = to_labels(noisy)?;
    let n = clean.len();
    NoisySplit::new(
        Matrix::from_vec(n, dim, data)?,
        clean,
        noisy,
        NoiseSpec::none(),
        classes,
    )
}
