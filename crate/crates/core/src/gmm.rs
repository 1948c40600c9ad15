//! Confidence-weighted Gaussian mixture colour models.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::ConfidenceField;
use crate::error::{Error, Result};
use crate::video::SuperpixelStats;

pub const DEFAULT_COMPONENTS: usize = 5;
/// Eigenvalue floor for component covariances, in squared 8-bit units.
pub const COVARIANCE_FLOOR: f64 = 1.0;
pub const MAX_EM_ITERATIONS: usize = 200;
pub const EM_TOLERANCE: f64 = 1e-6;
/// Lower bound on the mixture density.
pub const DENSITY_FLOOR: f64 = 1e-12;
/// Samples lighter than this are left out of a training set.
pub const MIN_SAMPLE_WEIGHT: f64 = 1e-3;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub color: [f64; 3],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    mean: Vector3<f64>,
    cov: Matrix3<f64>,
    inv: Matrix3<f64>,
    /// `ln N(mean; mean, cov)`.
    log_norm: f64,
}

impl Component {
    fn new(weight: f64, mean: Vector3<f64>, cov: Matrix3<f64>) -> Self {
        let inv = cov.try_inverse().expect("floored covariance is invertible");
        let log_norm = -0.5 * (3.0 * LN_2PI + cov.determinant().ln());
        Self {
            weight,
            mean,
            cov,
            inv,
            log_norm,
        }
    }

    fn log_density(&self, x: &Vector3<f64>) -> f64 {
        let d = x - self.mean;
        self.log_norm - 0.5 * (d.transpose() * self.inv * d)[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

/// Serialized form of a mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureDump {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    pub covariances: Vec<[[f64; 3]; 3]>,
}

fn floor_covariance(cov: &Matrix3<f64>, floor: f64) -> Matrix3<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(floor));
    let out = eig.eigenvectors * Matrix3::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (out + out.transpose()) * 0.5
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

impl GaussianMixture {
    /// Builds a mixture from raw parameters; covariances are floored.
    pub fn from_parts(
        weights: &[f64],
        means: &[[f64; 3]],
        covariances: &[[[f64; 3]; 3]],
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len()
        {
            return Err(Error::InvalidConfig(
                "mismatched mixture parameter lengths".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InvalidConfig(
                "mixture weights must be non-negative".into(),
            ));
        }
        let components = weights
            .iter()
            .zip(means)
            .zip(covariances)
            .map(|((&w, m), c)| {
                let cov = Matrix3::from_fn(|i, j| c[i][j]);
                Component::new(
                    w / total,
                    Vector3::from(*m),
                    floor_covariance(&cov, COVARIANCE_FLOOR),
                )
            })
            .collect();
        Ok(Self { components })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<[f64; 3]> {
        self.components.iter().map(|c| c.mean.into()).collect()
    }

    pub fn covariance(&self, k: usize) -> Matrix3<f64> {
        self.components[k].cov
    }

    fn weighted_log_terms(&self, x: &Vector3<f64>) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                if c.weight > 0.0 {
                    c.weight.ln() + c.log_density(x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    fn raw_log_likelihood(&self, x: &Vector3<f64>) -> f64 {
        log_sum_exp(&self.weighted_log_terms(x))
    }

    /// `ln Σ_k w_k N(color; μ_k, Σ_k)`, floored at `ln 1e-12`.
    pub fn log_likelihood(&self, color: [f64; 3]) -> f64 {
        self.raw_log_likelihood(&Vector3::from(color))
            .max(DENSITY_FLOOR.ln())
    }

    /// Posterior component probabilities for one colour.
    pub fn responsibilities(&self, color: [f64; 3]) -> Vec<f64> {
        let terms = self.weighted_log_terms(&Vector3::from(color));
        let total = log_sum_exp(&terms);
        terms.iter().map(|t| (t - total).exp()).collect()
    }

    pub fn dump(&self) -> MixtureDump {
        MixtureDump {
            weights: self.weights(),
            means: self.means(),
            covariances: self
                .components
                .iter()
                .map(|c| {
                    let m = c.cov;
                    [0, 1, 2].map(|i| [0, 1, 2].map(|j| m[(i, j)]))
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("mixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: MixtureDump = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("mixture json: {e}")))?;
        Self::from_parts(&d.weights, &d.means, &d.covariances)
    }
}

/// Weighted log-likelihood `Σ_n w_n ln p(x_n)` (unfloored).
pub fn weighted_log_likelihood(gmm: &GaussianMixture, samples: &[WeightedSample]) -> f64 {
    samples
        .iter()
        .map(|s| s.weight * gmm.raw_log_likelihood(&Vector3::from(s.color)))
        .sum()
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Weighted log-likelihood after initialization and after every EM step.
    pub log_likelihood: Vec<f64>,
}

fn distinct_count(samples: &[WeightedSample]) -> usize {
    let mut colors: Vec<[u64; 3]> = samples.iter().map(|s| s.color.map(f64::to_bits)).collect();
    colors.sort_unstable();
    colors.dedup();
    colors.len()
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum()
}

fn pick(rng: &mut ChaCha8Rng, mass: &[f64]) -> usize {
    let total: f64 = mass.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            if u < m {
                return i;
            }
            u -= m;
        }
    }
    mass.iter().rposition(|&m| m > 0.0).unwrap()
}

/// Weighted k-means++ seeding.
fn seed_centers(samples: &[WeightedSample], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let mut centers = vec![samples[pick(rng, &weights)].color];
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| sq_dist(&s.color, &centers[0]))
        .collect();
    while centers.len() < k {
        let mass: Vec<f64> = samples.iter().zip(&d2).map(|(s, d)| s.weight * d).collect();
        let c = samples[pick(rng, &mass)].color;
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(sq_dist(&s.color, &c));
        }
        centers.push(c);
    }
    centers
}

fn weighted_moments(
    samples: &[WeightedSample],
    resp: impl Fn(usize) -> f64,
) -> (f64, Vector3<f64>, Matrix3<f64>) {
    let mut mass = 0.0;
    let mut mean = Vector3::zeros();
    for (n, s) in samples.iter().enumerate() {
        let w = s.weight * resp(n);
        mass += w;
        mean += Vector3::from(s.color) * w;
    }
    if mass <= 0.0 {
        return (0.0, mean, Matrix3::identity() * COVARIANCE_FLOOR);
    }
    mean /= mass;
    let mut cov = Matrix3::zeros();
    for (n, s) in samples.iter().enumerate() {
        let w = s.weight * resp(n);
        let d = Vector3::from(s.color) - mean;
        cov += d * d.transpose() * w;
    }
    (mass, mean, cov / mass)
}

/// Fits a mixture of up to `k` components by weighted EM from a seeded
/// k-means++ start. `k` shrinks to the number of distinct colours.
pub fn fit_gmm(samples: &[WeightedSample], k: usize, seed: u64) -> Result<GaussianMixture> {
    fit_gmm_traced(samples, k, seed).map(|f| f.mixture)
}

pub fn fit_gmm_traced(samples: &[WeightedSample], k: usize, seed: u64) -> Result<GmmFit> {
    let samples: Vec<WeightedSample> = samples.iter().copied().filter(|s| s.weight > 0.0).collect();
    if samples.is_empty() {
        return Err(Error::DegenerateTrainingSet("no weighted samples"));
    }
    if samples
        .iter()
        .any(|s| !s.weight.is_finite() || s.color.iter().any(|c| !c.is_finite()))
    {
        return Err(Error::InvalidConfig("non-finite GMM sample".into()));
    }
    let k = k.max(1).min(distinct_count(&samples));
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // hard assignment to the seeded centres gives the starting parameters
    let centers = seed_centers(&samples, k, &mut rng);
    let nearest: Vec<usize> = samples
        .iter()
        .map(|s| {
            (0..k)
                .min_by(|&a, &b| {
                    sq_dist(&s.color, &centers[a]).total_cmp(&sq_dist(&s.color, &centers[b]))
                })
                .unwrap()
        })
        .collect();
    let mut components: Vec<Component> = (0..k)
        .map(|j| {
            let (mass, mean, cov) =
                weighted_moments(&samples, |n| if nearest[n] == j { 1.0 } else { 0.0 });
            Component::new(mass / total, mean, floor_covariance(&cov, COVARIANCE_FLOOR))
        })
        .collect();

    let mut gmm = GaussianMixture {
        components: components.clone(),
    };
    let mut ll = weighted_log_likelihood(&gmm, &samples);
    let mut trace = vec![ll];
    let mut resp = vec![0.0; samples.len() * k];
    for _ in 0..MAX_EM_ITERATIONS {
        for (n, s) in samples.iter().enumerate() {
            let r = gmm.responsibilities(s.color);
            resp[n * k..(n + 1) * k].copy_from_slice(&r);
        }
        components = (0..k)
            .map(|j| {
                let (mass, mean, cov) = weighted_moments(&samples, |n| resp[n * k + j]);
                if mass <= 0.0 {
                    let old = &gmm.components[j];
                    return Component::new(0.0, old.mean, old.cov);
                }
                Component::new(mass / total, mean, floor_covariance(&cov, COVARIANCE_FLOOR))
            })
            .collect();
        gmm = GaussianMixture {
            components: components.clone(),
        };
        let next = weighted_log_likelihood(&gmm, &samples);
        trace.push(next);
        let gain = next - ll;
        ll = next;
        if gain < EM_TOLERANCE {
            break;
        }
    }
    Ok(GmmFit {
        mixture: gmm,
        log_likelihood: trace,
    })
}

/// Splits superpixel mean colours into object samples weighted by `c_i` and
/// background samples weighted by `1 − c_i`.
pub fn sample_training_sets(
    field: &ConfidenceField,
    stats: &SuperpixelStats,
) -> Result<(Vec<WeightedSample>, Vec<WeightedSample>)> {
    if field.values.len() != stats.records.len() {
        return Err(Error::DimensionMismatch(
            "confidence field vs superpixel stats".into(),
        ));
    }
    let mut object = Vec::new();
    let mut background = Vec::new();
    for (&c, rec) in field.values.iter().zip(&stats.records) {
        let c = c.clamp(0.0, 1.0);
        if c >= MIN_SAMPLE_WEIGHT {
            object.push(WeightedSample {
                color: rec.mean_color,
                weight: c,
            });
        }
        if 1.0 - c >= MIN_SAMPLE_WEIGHT {
            background.push(WeightedSample {
                color: rec.mean_color,
                weight: 1.0 - c,
            });
        }
    }
    if object.is_empty() {
        return Err(Error::DegenerateTrainingSet("object set is empty"));
    }
    if background.is_empty() {
        return Err(Error::DegenerateTrainingSet("background set is empty"));
    }
    Ok((object, background))
}
