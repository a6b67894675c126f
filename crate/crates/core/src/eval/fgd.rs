//! Fréchet gesture distance and the sequence autoencoder whose pooled
//! encodings serve as its feature space.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayView2, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PoseNormalizer;
use crate::error::{Error, Result};
use crate::nn::ops::{scalar, stack_sequences};
use crate::nn::{Adam, AdamConfig, Checkpoint, Gru, Linear, ParamStore};

pub const EXTRACTOR_KIND: &str = "fgd-extractor";

/// Sample mean and unbiased covariance of the rows of `x`.
pub fn moments(x: ArrayView2<'_, f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 feature vectors, got {n}")));
    }
    let mut mu = DVector::zeros(d);
    for row in x.outer_iter() {
        for k in 0..d {
            mu[k] += row[k];
        }
    }
    mu /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for row in x.outer_iter() {
        let c = DVector::from_iterator(d, row.iter().copied()) - &mu;
        cov += &c * c.transpose();
    }
    cov /= (n - 1) as f64;
    Ok((mu, cov))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root of a symmetric positive semi-definite matrix, negative
/// eigenvalues from round-off clipped to 0.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `tr((A B)^{1/2})` for covariance matrices, evaluated as
/// `tr((A^{1/2} B A^{1/2})^{1/2})`, which is similar to `(A B)^{1/2}`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let s = sqrtm_psd(a);
    let inner = symmetrize(&(&s * b * &s));
    SymmetricEigen::new(inner).eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, floored at 0.
pub fn frechet_distance(mu1: &DVector<f64>, cov1: &DMatrix<f64>, mu2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::Argument("Fréchet distance inputs disagree in dimension".into()));
    }
    let mean_term = (mu1 - mu2).norm_squared();
    let value = mean_term + cov1.trace() + cov2.trace() - 2.0 * trace_sqrt_product(cov1, cov2);
    if !value.is_finite() {
        return Err(Error::Argument("Fréchet distance is not finite".into()));
    }
    Ok(value.max(0.0))
}

/// Fréchet distance between Gaussian fits of two feature sets `N x D_f`.
pub fn fgd(real: ArrayView2<'_, f64>, generated: ArrayView2<'_, f64>) -> Result<f64> {
    if real.ncols() != generated.ncols() {
        return Err(Error::Argument(format!(
            "feature widths differ: {} vs {}",
            real.ncols(),
            generated.ncols()
        )));
    }
    for (name, x) in [("real", &real), ("generated", &generated)] {
        if x.nrows() <= x.ncols() {
            log::warn!(
                "{name} set has {} samples for {} feature dims; covariance is rank deficient",
                x.nrows(),
                x.ncols()
            );
        }
    }
    let (m1, c1) = moments(real)?;
    let (m2, c2) = moments(generated)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureExtractorConfig {
    pub hidden: usize,
    /// Width `D_f` of the pooled feature.
    pub feature_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for FeatureExtractorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            feature_dim: 32,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl FeatureExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.feature_dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("feature extractor sizes must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("feature extractor `learning_rate` must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ExtractorHeader {
    config: FeatureExtractorConfig,
    points: usize,
    normalizer: PoseNormalizer,
}

/// Recurrent autoencoder over body poses. The per-frame code is the
/// feature track; its time mean is the sequence feature.
#[derive(Debug)]
pub struct PoseFeatureExtractor {
    store: ParamStore,
    encoder: Gru,
    code: Linear,
    decoder: Gru,
    out: Linear,
    header: ExtractorHeader,
}

impl PoseFeatureExtractor {
    fn build(header: ExtractorHeader) -> Result<Self> {
        let cfg = &header.config;
        cfg.validate()?;
        let mut store = ParamStore::new(cfg.seed, DType::F32);
        let encoder = Gru::new(&mut store, "fgd.enc", 2 * header.points, cfg.hidden)?;
        let code = Linear::new(&mut store, "fgd.code", cfg.hidden, cfg.feature_dim)?;
        let decoder = Gru::new(&mut store, "fgd.dec", cfg.feature_dim, cfg.hidden)?;
        let out = Linear::new(&mut store, "fgd.out", cfg.hidden, 2 * header.points)?;
        Ok(Self {
            store,
            encoder,
            code,
            decoder,
            out,
            header,
        })
    }

    pub fn config(&self) -> &FeatureExtractorConfig {
        &self.header.config
    }

    fn codes(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, j, c) = x.dims4()?;
        self.code.forward(&self.encoder.forward(&x.reshape((b, t, j * c))?)?)
    }

    fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.codes(x)?;
        Ok(self.out.forward(&self.decoder.forward(&z)?)?.reshape(x.shape())?)
    }

    fn normalized(&self, seqs: &[ArrayView3<'_, f32>]) -> Result<Tensor> {
        let z: Vec<_> = seqs
            .iter()
            .map(|s| self.header.normalizer.normalize(*s))
            .collect::<Result<_>>()?;
        stack_sequences(&z.iter().map(|a| a.view()).collect::<Vec<_>>(), DType::F32)
    }

    /// Fits on real body sequences of equal length; returns the per-epoch
    /// mean squared reconstruction error.
    pub fn train(bodies: &[ArrayView3<'_, f32>], cfg: &FeatureExtractorConfig) -> Result<(Self, Vec<f64>)> {
        let Some(first) = bodies.first() else {
            return Err(Error::Argument("no sequences to train the feature extractor".into()));
        };
        let header = ExtractorHeader {
            config: cfg.clone(),
            points: first.dim().1,
            normalizer: PoseNormalizer::fit(bodies.iter().copied())?,
        };
        let model = Self::build(header)?;
        let data = model.normalized(bodies)?;
        let n = bodies.len();
        let mut opt = Adam::new(
            AdamConfig {
                lr: cfg.learning_rate,
                ..AdamConfig::default()
            },
            &["fgd."],
        );
        let mut log = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let idx = Tensor::from_slice(chunk, chunk.len(), data.device())?;
                let x = data.index_select(&idx, 0)?;
                let loss = (model.reconstruct(&x)? - &x)?.sqr()?.mean_all()?;
                let v = scalar(&loss)?;
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        component: "feature extractor reconstruction".into(),
                    });
                }
                total += v * chunk.len() as f64;
                opt.step(&model.store, &loss.backward()?)?;
            }
            log.push(total / n as f64);
            log::debug!("feature extractor epoch {epoch}: {:.5}", total / n as f64);
        }
        Ok((model, log))
    }

    /// Pooled features `N x D_f`; sequences may differ in length.
    pub fn features(&self, bodies: &[ArrayView3<'_, f32>]) -> Result<Array2<f64>> {
        let d = self.header.config.feature_dim;
        let mut out = Array2::zeros((bodies.len(), d));
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, b) in bodies.iter().enumerate() {
            if b.dim().1 != self.header.points || b.dim().0 == 0 {
                return Err(Error::Argument(format!(
                    "feature extractor expects T x {} x 2 body sequences, got {:?}",
                    self.header.points,
                    b.dim()
                )));
            }
            by_len.entry(b.dim().0).or_default().push(i);
        }
        for idx in by_len.values() {
            for chunk in idx.chunks(self.header.config.batch_size.max(1)) {
                let views: Vec<_> = chunk.iter().map(|&i| bodies[i]).collect();
                let pooled = self.codes(&self.normalized(&views)?)?.mean(D::Minus2)?;
                let rows = pooled.to_dtype(DType::F64)?.to_vec2::<f64>()?;
                for (&i, row) in chunk.iter().zip(rows) {
                    for (k, v) in row.into_iter().enumerate() {
                        out[[i, k]] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = serde_json::json!({ "extractor": self.header });
        Ok(Checkpoint::new(EXTRACTOR_KIND, header, self.store.export()?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::read(path)?;
        ckpt.expect_kind(EXTRACTOR_KIND, path)?;
        let model = Self::build(ckpt.field("extractor", path)?)?;
        model.store.import(&ckpt.tensors, &path.display().to_string())?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn constant_sets_with_analytic_unit_variance() {
        let mu0 = DVector::from_element(1, 0.0);
        let mu1 = DVector::from_element(1, 1.0);
        let one = DMatrix::identity(1, 1);
        assert!((frechet_distance(&mu0, &one, &mu1, &one).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_swapped() {
        let a = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 + 0.1 * j as f64);
        let b = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 5 + j) % 13) as f64 * 0.5);
        assert!(fgd(a.view(), a.view()).unwrap() < 1e-6);
        let ab = fgd(a.view(), b.view()).unwrap();
        let ba = fgd(b.view(), a.view()).unwrap();
        assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
        assert!(fgd(a.slice(ndarray::s![..1, ..]), b.view()).is_err());
    }

    #[test]
    fn sqrtm_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sqrtm_psd(&m);
        assert!((&s * &s - &m).abs().max() < 1e-12);
    }

    #[test]
    fn extractor_round_trips_through_checkpoint() {
        let seqs: Vec<Array3<f32>> = (0..6)
            .map(|k| Array3::from_shape_fn((8, 3, 2), |(t, j, c)| ((t + k) as f32 * 0.3 + j as f32 + c as f32).sin()))
            .collect();
        let views: Vec<_> = seqs.iter().map(|s| s.view()).collect();
        let cfg = FeatureExtractorConfig {
            hidden: 8,
            feature_dim: 4,
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let (model, log) = PoseFeatureExtractor::train(&views, &cfg).unwrap();
        assert_eq!(log.len(), 2);
        let f = model.features(&views).unwrap();
        assert_eq!(f.dim(), (6, 4));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fx.gck");
        model.save(&p).unwrap();
        assert_eq!(PoseFeatureExtractor::load(&p).unwrap().features(&views).unwrap(), f);
    }
}
