//! Synthetic data generators, input scaling and the latent/linear equivalence.
//!
//! A [`DataModel`] is a serialisable description. Drawing a [`Population`]
//! from it fixes the random parts of the distribution (the true `beta` of the
//! isotropic and equicorrelated families, the factor loadings `W` of the latent
//! family); a population then yields any number of i.i.d. samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, gaussian_matrix, gaussian_vector, sorted_symmetric_eigen};
use crate::rng::{derive_seed, rng_from};

const TAG_POPULATION: u64 = 0x706f70;
const TAG_DATA: u64 = 0x64617461;
const TAG_W: u64 = 0x77;

/// Input normalisation `x -> x / eta(m)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    Unit,
    SqrtLog,
    SqrtM,
}

impl Scaling {
    pub fn eta(self, m: usize) -> Result<f64> {
        let eta = match self {
            Scaling::Unit => 1.0,
            Scaling::SqrtLog => (m as f64).ln().sqrt(),
            Scaling::SqrtM => (m as f64).sqrt(),
        };
        if eta > 0.0 && eta.is_finite() {
            Ok(eta)
        } else {
            Err(Error::param(format!("scaling {self:?} is degenerate at m = {m}")))
        }
    }
}

impl std::str::FromStr for Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "unit" | "1" | "none" => Ok(Scaling::Unit),
            "sqrtlog" | "sqrtlogm" => Ok(Scaling::SqrtLog),
            "sqrtm" => Ok(Scaling::SqrtM),
            _ => Err(Error::param(format!("unknown scaling '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelFamily {
    Isotropic {
        m: usize,
        r2: f64,
        sigma2: f64,
    },
    Equicorrelated {
        m: usize,
        rho: f64,
        r2: f64,
        sigma2: f64,
    },
    Latent {
        m: usize,
        d: usize,
        theta: Vec<f64>,
        sigma_xi2: f64,
    },
    WeakFeatures {
        m: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataModel {
    pub variant: ModelFamily,
    pub scaling: Scaling,
}

impl DataModel {
    pub fn new(variant: ModelFamily, scaling: Scaling) -> Result<DataModel> {
        let model = DataModel { variant, scaling };
        model.validate()?;
        Ok(model)
    }

    pub fn isotropic(m: usize, r2: f64, sigma2: f64) -> DataModel {
        DataModel {
            variant: ModelFamily::Isotropic { m, r2, sigma2 },
            scaling: Scaling::Unit,
        }
    }

    pub fn with_scaling(mut self, scaling: Scaling) -> DataModel {
        self.scaling = scaling;
        self
    }

    pub fn m(&self) -> usize {
        match self.variant {
            ModelFamily::Isotropic { m, .. }
            | ModelFamily::Equicorrelated { m, .. }
            | ModelFamily::Latent { m, .. }
            | ModelFamily::WeakFeatures { m } => m,
        }
    }

    /// Same family and parameters with a different number of features.
    pub fn with_m(&self, new_m: usize) -> DataModel {
        let mut out = self.clone();
        match &mut out.variant {
            ModelFamily::Isotropic { m, .. }
            | ModelFamily::Equicorrelated { m, .. }
            | ModelFamily::Latent { m, .. }
            | ModelFamily::WeakFeatures { m } => *m = new_m,
        }
        out
    }

    pub fn family_name(&self) -> &'static str {
        match self.variant {
            ModelFamily::Isotropic { .. } => "isotropic",
            ModelFamily::Equicorrelated { .. } => "equicorrelated",
            ModelFamily::Latent { .. } => "latent",
            ModelFamily::WeakFeatures { .. } => "weak_features",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        if self.m() == 0 {
            return Err(Error::param("m must be >= 1"));
        }
        match &self.variant {
            ModelFamily::Isotropic { r2, sigma2, .. } => {
                nonneg("r2", *r2)?;
                nonneg("sigma2", *sigma2)?;
            }
            ModelFamily::Equicorrelated { rho, r2, sigma2, .. } => {
                nonneg("r2", *r2)?;
                nonneg("sigma2", *sigma2)?;
                check_rho(*rho)?;
            }
            ModelFamily::Latent {
                m,
                d,
                theta,
                sigma_xi2,
            } => {
                nonneg("sigma_xi2", *sigma_xi2)?;
                if *d == 0 || d > m {
                    return Err(Error::param(format!("latent dimension d = {d} must be in 1..=m = {m}")));
                }
                if theta.len() != *d {
                    return Err(Error::dims(format!(
                        "theta has length {}, expected d = {d}",
                        theta.len()
                    )));
                }
                if theta.iter().any(|t| !t.is_finite()) {
                    return Err(Error::param("theta must be finite"));
                }
            }
            ModelFamily::WeakFeatures { .. } => {}
        }
        self.scaling.eta(self.m())?;
        Ok(())
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::param(format!("rho must lie in [0, 1), got {rho}")))
    }
}

/// Structured covariance `scale * K`, where `K` is one of a few families with
/// cheap quadratic forms and samplers.
#[derive(Debug, Clone)]
pub struct Covariance {
    dim: usize,
    scale: f64,
    kind: CovarianceKind,
}

#[derive(Debug, Clone)]
enum CovarianceKind {
    Identity,
    /// Unit diagonal, `rho` off the diagonal.
    Equicorrelated { rho: f64 },
    /// `I + W W^T`.
    LatentFactor { w: DMatrix<f64> },
    /// Arbitrary PSD matrix with a square-root factor `F F^T = A`.
    Dense { matrix: DMatrix<f64>, factor: DMatrix<f64> },
}

impl Covariance {
    pub fn identity(m: usize) -> Covariance {
        Covariance {
            dim: m,
            scale: 1.0,
            kind: CovarianceKind::Identity,
        }
    }

    pub fn equicorrelated(m: usize, rho: f64) -> Result<Covariance> {
        check_rho(rho)?;
        Ok(Covariance {
            dim: m,
            scale: 1.0,
            kind: CovarianceKind::Equicorrelated { rho },
        })
    }

    pub fn latent_factor(w: DMatrix<f64>) -> Covariance {
        Covariance {
            dim: w.nrows(),
            scale: 1.0,
            kind: CovarianceKind::LatentFactor { w },
        }
    }

    pub fn dense(matrix: DMatrix<f64>) -> Result<Covariance> {
        check_psd(&matrix)?;
        let (values, vectors) = sorted_symmetric_eigen(matrix.clone());
        let mut factor = vectors;
        for (c, l) in values.iter().enumerate() {
            factor.column_mut(c).scale_mut(l.max(0.0).sqrt());
        }
        Ok(Covariance {
            dim: matrix.nrows(),
            scale: 1.0,
            kind: CovarianceKind::Dense { matrix, factor },
        })
    }

    pub fn scaled(mut self, factor: f64) -> Covariance {
        self.scale *= factor;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `v^T Sigma v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let base = match &self.kind {
            CovarianceKind::Identity => v.norm_squared(),
            CovarianceKind::Equicorrelated { rho } => {
                let s = v.sum();
                (1.0 - rho) * v.norm_squared() + rho * s * s
            }
            CovarianceKind::LatentFactor { w } => v.norm_squared() + w.tr_mul(v).norm_squared(),
            CovarianceKind::Dense { matrix, .. } => v.dot(&(matrix * v)),
        };
        self.scale * base
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim;
        let base = match &self.kind {
            CovarianceKind::Identity => DMatrix::identity(m, m),
            CovarianceKind::Equicorrelated { rho } => {
                DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { *rho })
            }
            CovarianceKind::LatentFactor { w } => DMatrix::identity(m, m) + w * w.transpose(),
            CovarianceKind::Dense { matrix, .. } => matrix.clone(),
        };
        base * self.scale
    }

    /// `n` i.i.d. rows from `N(0, Sigma)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let m = self.dim;
        let mut x = match &self.kind {
            CovarianceKind::Identity => gaussian_matrix(n, m, rng),
            CovarianceKind::Equicorrelated { rho } => {
                let mut z = gaussian_matrix(n, m, rng);
                let g = gaussian_vector(n, rng);
                let (a, b) = ((1.0 - rho).sqrt(), rho.sqrt());
                for i in 0..n {
                    let shift = b * g[i];
                    for j in 0..m {
                        z[(i, j)] = a * z[(i, j)] + shift;
                    }
                }
                z
            }
            CovarianceKind::LatentFactor { w } => {
                let z = gaussian_matrix(n, w.ncols(), rng);
                gaussian_matrix(n, m, rng) + z * w.transpose()
            }
            CovarianceKind::Dense { factor, .. } => gaussian_matrix(n, m, rng) * factor.transpose(),
        };
        if self.scale != 1.0 {
            x *= self.scale.sqrt();
        }
        x
    }
}

/// Parameters of the linear-Gaussian model `y = x^T beta + eps`,
/// `x ~ N(0, Sigma)`, `eps ~ N(0, sigma2)` that a population is equal to in
/// distribution.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta: DVector<f64>,
    pub covariance: Covariance,
    pub sigma2: f64,
}

impl GroundTruth {
    fn rescaled(&self, eta: f64) -> GroundTruth {
        GroundTruth {
            beta: &self.beta * eta,
            covariance: self.covariance.clone().scaled(1.0 / (eta * eta)),
            sigma2: self.sigma2,
        }
    }
}

#[derive(Debug, Clone)]
enum Source {
    Linear,
    Latent {
        w: DMatrix<f64>,
        theta: DVector<f64>,
        sigma_xi2: f64,
    },
    WeakFeatures,
}

/// A data distribution with all of its random parameters fixed.
#[derive(Debug, Clone)]
pub struct Population {
    model: DataModel,
    eta: f64,
    base: GroundTruth,
    source: Source,
}

impl Population {
    pub fn draw(model: &DataModel, seed: u64) -> Result<Population> {
        model.validate()?;
        let m = model.m();
        let eta = model.scaling.eta(m)?;
        let mut rng = rng_from(seed);
        let (base, source) = match &model.variant {
            ModelFamily::Isotropic { r2, sigma2, .. } => {
                let mut beta = gaussian_vector(m, &mut rng);
                let norm = beta.norm();
                beta *= r2.sqrt() / norm;
                let truth = GroundTruth {
                    beta,
                    covariance: Covariance::identity(m),
                    sigma2: *sigma2,
                };
                (truth, Source::Linear)
            }
            ModelFamily::Equicorrelated { rho, r2, sigma2, .. } => {
                let beta = gaussian_vector(m, &mut rng) * (r2 / m as f64).sqrt();
                let truth = GroundTruth {
                    beta,
                    covariance: Covariance::equicorrelated(m, *rho)?,
                    sigma2: *sigma2,
                };
                (truth, Source::Linear)
            }
            ModelFamily::Latent {
                d,
                theta,
                sigma_xi2,
                ..
            } => {
                let w = make_orthogonal_w(m, *d, derive_seed(seed, &[TAG_W]))?;
                let theta = DVector::from_column_slice(theta);
                let (beta, covariance, sigma2) = latent_to_linear(&w, &theta, *sigma_xi2)?;
                let truth = GroundTruth {
                    beta,
                    covariance,
                    sigma2,
                };
                let source = Source::Latent {
                    w,
                    theta,
                    sigma_xi2: *sigma_xi2,
                };
                (truth, source)
            }
            ModelFamily::WeakFeatures { .. } => {
                let mf = m as f64;
                let truth = GroundTruth {
                    beta: DVector::from_element(m, mf.sqrt() / (mf + 1.0)),
                    covariance: Covariance::equicorrelated(m, 0.5)?.scaled(2.0 / mf),
                    sigma2: 1.0 / (mf + 1.0),
                };
                (truth, Source::WeakFeatures)
            }
        };
        Ok(Population {
            model: model.clone(),
            eta,
            base,
            source,
        })
    }

    pub fn model(&self) -> &DataModel {
        &self.model
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    /// Linear-equivalent parameters in the scaled input coordinates.
    pub fn truth(&self) -> GroundTruth {
        self.base.rescaled(self.eta)
    }

    /// Linear-equivalent parameters before input scaling.
    pub fn unscaled_truth(&self) -> &GroundTruth {
        &self.base
    }

    /// `n` i.i.d. samples, inputs already divided by `eta`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (DMatrix<f64>, DVector<f64>) {
        let (mut x, y) = self.sample_unscaled(n, rng);
        if self.eta != 1.0 {
            x /= self.eta;
        }
        (x, y)
    }

    fn sample_unscaled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.m();
        match &self.source {
            Source::Linear => {
                let x = self.base.covariance.sample(n, rng);
                let noise = gaussian_vector(n, rng) * self.base.sigma2.sqrt();
                let y = &x * &self.base.beta + noise;
                (x, y)
            }
            Source::Latent {
                w,
                theta,
                sigma_xi2,
            } => {
                let z = gaussian_matrix(n, w.ncols(), rng);
                let x = gaussian_matrix(n, m, rng) + &z * w.transpose();
                let y = &z * theta + gaussian_vector(n, rng) * sigma_xi2.sqrt();
                (x, y)
            }
            Source::WeakFeatures => {
                let y = gaussian_vector(n, rng);
                let inv_sqrt_m = 1.0 / (m as f64).sqrt();
                let mut x = gaussian_matrix(n, m, rng) * inv_sqrt_m;
                for i in 0..n {
                    let shift = y[i] * inv_sqrt_m;
                    for j in 0..m {
                        x[(i, j)] += shift;
                    }
                }
                (x, y)
            }
        }
    }

    pub fn dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::param("n must be >= 1"));
        }
        let (x, y) = self.sample(n, &mut rng_from(seed));
        Ok(Dataset {
            x,
            y,
            truth: self.truth(),
            scaling: self.model.scaling,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub truth: GroundTruth,
    pub scaling: Scaling,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }
}

/// Draws a population and `n` training samples from it. The population
/// depends on `seed` only through a derived stream, so models differing only in
/// their scaling share the same underlying data.
pub fn sample_dataset(model: &DataModel, n: usize, seed: u64) -> Result<Dataset> {
    let population = Population::draw(model, derive_seed(seed, &[TAG_POPULATION]))?;
    population.dataset(n, derive_seed(seed, &[TAG_DATA]))
}

/// Dense equicorrelated matrix with its analytic eigenstructure: the
/// eigenvalue `1 + (m-1) rho` for `1/sqrt(m)` and `1 - rho` (multiplicity
/// `m - 1`) on the complement, spanned by Helmert contrasts.
pub fn equicorrelated_sigma(m: usize, rho: f64) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    check_rho(rho)?;
    if m == 0 {
        return Err(Error::param("m must be >= 1"));
    }
    let sigma = Covariance::equicorrelated(m, rho)?.to_dense();
    let mut values = DVector::from_element(m, 1.0 - rho);
    values[0] = 1.0 + (m as f64 - 1.0) * rho;
    let mut vectors = DMatrix::zeros(m, m);
    let inv = 1.0 / (m as f64).sqrt();
    vectors.column_mut(0).fill(inv);
    for k in 1..m {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            vectors[(i, k)] = 1.0 / norm;
        }
        vectors[(k, k)] = -(k as f64) / norm;
    }
    Ok((sigma, values, vectors))
}

/// `m x d` loadings with `W^T W = (m/d) I`.
pub fn make_orthogonal_w(m: usize, d: usize, seed: u64) -> Result<DMatrix<f64>> {
    if d == 0 || d > m {
        return Err(Error::param(format!("need 1 <= d <= m, got d = {d}, m = {m}")));
    }
    let g = gaussian_matrix(m, d, &mut rng_from(seed));
    let q = g.qr().q();
    Ok(q * (m as f64 / d as f64).sqrt())
}

/// Linear model equal in distribution to `x = W z + u`, `y = theta^T z + xi`.
pub fn latent_to_linear(
    w: &DMatrix<f64>,
    theta: &DVector<f64>,
    sigma_xi2: f64,
) -> Result<(DVector<f64>, Covariance, f64)> {
    let d = w.ncols();
    if theta.len() != d {
        return Err(Error::dims(format!("theta has length {}, W has {d} columns", theta.len())));
    }
    let inner = DMatrix::identity(d, d) + w.tr_mul(w);
    let solved = crate::linalg::spd_solve(inner, theta)?;
    let beta = w * &solved;
    let sigma2 = sigma_xi2 + theta.dot(&solved);
    Ok((beta, Covariance::latent_factor(w.clone()), sigma2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakFeaturesReference {
    pub beta: DVector<f64>,
    pub risk: f64,
    pub l1_norm: f64,
}

/// The averaging predictor `beta = 1/sqrt(m)` of the weak-features model.
pub fn weak_features_reference(m: usize) -> WeakFeaturesReference {
    let mf = m as f64;
    WeakFeaturesReference {
        beta: DVector::from_element(m, 1.0 / mf.sqrt()),
        risk: 1.0 / mf,
        l1_norm: mf.sqrt(),
    }
}

/// Per-replicate population and data streams used by the experiment crate.
pub fn replicate_streams(seed: u64, tags: &[u64]) -> (u64, u64) {
    let mut pop = tags.to_vec();
    pop.push(TAG_POPULATION);
    let mut data = tags.to_vec();
    data.push(TAG_DATA);
    (derive_seed(seed, &pop), derive_seed(seed, &data))
}
