//! Synthetic data: AR(1)-correlated GLM designs and the two-tone spectral
//! dictionary problem.
//!
//! All randomness comes from ChaCha8 streams. A `(seed, stream)` pair fully
//! determines a draw; independent data sets (training, validation, test) use
//! distinct stream ids under the same seed. Normal variates are produced by
//! the Box–Muller transform: two uniforms `u₁ ∈ (0, 1]`, `u₂ ∈ [0, 1)` from
//! `Rng::random::<f64>()` give `r = sqrt(−2 ln u₁)` and the pair
//! `(r cos 2πu₂, r sin 2πu₂)`, consumed in that order.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Result, TispError};
use crate::glm::GlmFamily;
use crate::solver::GroupSpec;

/// Stream ids for the data sets of one replication.
pub const TRAIN_STREAM: u64 = 0;
pub const VALIDATION_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;

/// Standard normal generator (Box–Muller on a ChaCha8 stream).
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// AR(1) design: rows are i.i.d. `N(0, Σ)` with `Σ_jk = ρ^|j−k|`, and the
/// true coefficients are `(b, 0, b, b, 0, …, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Design {
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub b: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta_true: DVector<f64>,
}

pub fn true_beta(p: usize, b: f64) -> DVector<f64> {
    let mut beta = DVector::zeros(p);
    for j in [0, 2, 3] {
        if j < p {
            beta[j] = b;
        }
    }
    beta
}

impl Ar1Design {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(TispError::InvalidParameter(format!(
                "rho must lie in [0, 1), got {}",
                self.rho
            )));
        }
        if self.n == 0 || self.p == 0 {
            return Err(TispError::InvalidParameter(
                "n and p must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Design matrix with `n_obs` rows drawn from the given stream.
    pub fn design(&self, n_obs: usize, stream: u64) -> DMatrix<f64> {
        let mut normals = NormalStream::new(self.seed, stream);
        let innovation = (1.0 - self.rho * self.rho).sqrt();
        let mut x = DMatrix::zeros(n_obs, self.p);
        for i in 0..n_obs {
            let mut prev = normals.next_normal();
            x[(i, 0)] = prev;
            for j in 1..self.p {
                prev = self.rho * prev + innovation * normals.next_normal();
                x[(i, j)] = prev;
            }
        }
        x
    }
}

/// Population covariance implied by the AR(1) recursion
/// `x_j = ρ x_{j−1} + sqrt(1 − ρ²) z_j`, built from the recursion itself.
pub fn ar1_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    let mut sigma = DMatrix::zeros(p, p);
    for k in 0..p {
        sigma[(k, k)] = if k == 0 {
            1.0
        } else {
            rho * rho * sigma[(k - 1, k - 1)] + (1.0 - rho * rho)
        };
        for j in 0..k {
            // x_j is independent of the innovation z_k
            sigma[(j, k)] = rho * sigma[(j, k - 1)];
            sigma[(k, j)] = sigma[(j, k)];
        }
    }
    sigma
}

/// Draws responses from `family` at linear predictor `eta`.
pub fn draw_response(
    family: GlmFamily,
    eta: &DVector<f64>,
    seed: u64,
    stream: u64,
) -> DVector<f64> {
    let mut gen = NormalStream::new(seed, stream);
    eta.map(|t| match family {
        GlmFamily::GaussianIdentity => t + gen.next_normal(),
        GlmFamily::BernoulliLogit => {
            if gen.next_uniform() < family.mean(t) {
                1.0
            } else {
                0.0
            }
        }
        GlmFamily::PoissonLog => {
            let rate = family.mean(t).clamp(1e-12, 1e12);
            Poisson::new(rate)
                .map(|d| d.sample(gen.rng()))
                .unwrap_or(0.0)
        }
    })
}

/// Training-stream draw of `n_obs` observations.
pub fn gen_ar1_glm(design: &Ar1Design, family: GlmFamily, n_obs: usize) -> Result<SimulatedData> {
    gen_ar1_glm_stream(design, family, n_obs, TRAIN_STREAM)
}

/// Draw of `n_obs` observations from stream `stream`. The design uses stream
/// `2·stream` and the response `2·stream + 1` so the two never overlap.
pub fn gen_ar1_glm_stream(
    design: &Ar1Design,
    family: GlmFamily,
    n_obs: usize,
    stream: u64,
) -> Result<SimulatedData> {
    design.validate()?;
    let x = design.design(n_obs, 2 * stream);
    let beta_true = true_beta(design.p, design.b);
    let eta = &x * &beta_true;
    let y = draw_response(family, &eta, design.seed, 2 * stream + 1);
    Ok(SimulatedData { x, y, beta_true })
}

/// Two-tone signal `a₁cos(2πf₁t + φ₁) + a₂cos(2πf₂t + φ₂)` in white noise,
/// observed at `n` points and represented with a `K`-bin dictionary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwinSineSpec {
    pub n: usize,
    pub k_bins: usize,
    pub f_max: f64,
    pub amplitudes: [f64; 2],
    pub phases: [f64; 2],
    pub frequencies: [f64; 2],
    pub sigma2: f64,
    pub seed: u64,
}

impl Default for TwinSineSpec {
    fn default() -> Self {
        Self {
            n: 100,
            k_bins: 250,
            f_max: 0.5,
            amplitudes: [2.0, 3.0],
            phases: [PI / 3.0, PI / 5.0],
            frequencies: [0.25, 0.252],
            sigma2: 1.0,
            seed: 0,
        }
    }
}

impl TwinSineSpec {
    /// Sampling instants `1, 2, …, n`.
    pub fn training_times(&self) -> Vec<f64> {
        (1..=self.n).map(|i| i as f64).collect()
    }

    pub fn clean(&self, t: f64) -> f64 {
        (0..2)
            .map(|i| {
                self.amplitudes[i] * (2.0 * PI * self.frequencies[i] * t + self.phases[i]).cos()
            })
            .sum()
    }

    /// Average power of the clean signal over a long window.
    pub fn signal_power(&self) -> f64 {
        0.5 * (self.amplitudes[0].powi(2) + self.amplitudes[1].powi(2))
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.signal_power() / self.sigma2).log10()
    }

    /// Dictionary bins of the two tones (`f_k = f_max·k/K`), if on the grid.
    pub fn tone_bins(&self) -> [Option<usize>; 2] {
        self.frequencies.map(|f| {
            let k = f * self.k_bins as f64 / self.f_max;
            let r = k.round();
            ((k - r).abs() < 1e-9 && r >= 1.0).then_some(r as usize)
        })
    }
}

/// Noisy samples and the clean signal at `time_points`.
pub fn gen_twinsine(
    spec: &TwinSineSpec,
    time_points: &[f64],
    stream: u64,
) -> (DVector<f64>, DVector<f64>) {
    let clean = DVector::from_iterator(
        time_points.len(),
        time_points.iter().map(|&t| spec.clean(t)),
    );
    let mut noise = NormalStream::new(spec.seed, stream);
    let sd = spec.sigma2.max(0.0).sqrt();
    let y = clean.map(|c| c + sd * noise.next_normal());
    (y, clean)
}

/// Uniform random instants in `[lo, hi]`.
pub fn random_times(n: usize, lo: f64, hi: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut g = NormalStream::new(seed, stream);
    (0..n).map(|_| lo + (hi - lo) * g.next_uniform()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomKind {
    Cos,
    Sin,
}

/// Column layout of a cosine/sine dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub x: DMatrix<f64>,
    pub groups: GroupSpec,
    /// `(bin, kind)` of every column.
    pub atoms: Vec<(usize, AtomKind)>,
    /// Frequency bin of every group.
    pub group_bins: Vec<usize>,
    pub k_bins: usize,
    pub f_max: f64,
}

impl Dictionary {
    pub fn frequency(&self, bin: usize) -> f64 {
        self.f_max * bin as f64 / self.k_bins as f64
    }

    /// Evaluates the same atoms at other instants.
    pub fn evaluate(&self, time_points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(time_points.len(), self.atoms.len(), |i, j| {
            let (bin, kind) = self.atoms[j];
            let arg = 2.0 * PI * time_points[i] * self.frequency(bin);
            match kind {
                AtomKind::Cos => arg.cos(),
                AtomKind::Sin => arg.sin(),
            }
        })
    }

    /// Group index of frequency bin `bin`.
    pub fn group_of_bin(&self, bin: usize) -> Option<usize> {
        self.group_bins.iter().position(|&b| b == bin)
    }
}

/// Cosine atoms for bins `1..=K` followed by sine atoms for bins `1..=K`,
/// where the sine atom of bin `K` is dropped when it vanishes on every time
/// point. Cosine and sine atoms of the same bin form one group.
pub fn build_dictionary(time_points: &[f64], k_bins: usize, f_max: f64) -> Result<Dictionary> {
    if k_bins == 0 {
        return Err(TispError::InvalidParameter(
            "need at least one frequency bin".into(),
        ));
    }
    let last_sine_vanishes = time_points
        .iter()
        .all(|&t| (2.0 * PI * t * f_max).sin().abs() < 1e-9);
    let n_sin = if last_sine_vanishes {
        k_bins - 1
    } else {
        k_bins
    };
    let mut atoms: Vec<(usize, AtomKind)> = (1..=k_bins).map(|k| (k, AtomKind::Cos)).collect();
    atoms.extend((1..=n_sin).map(|k| (k, AtomKind::Sin)));
    let groups = (0..k_bins)
        .map(|k| {
            if k < n_sin {
                vec![k, k_bins + k]
            } else {
                vec![k]
            }
        })
        .collect();
    let p = atoms.len();
    let mut dict = Dictionary {
        x: DMatrix::zeros(0, 0),
        groups: GroupSpec::new(groups, p)?,
        atoms,
        group_bins: (1..=k_bins).collect(),
        k_bins,
        f_max,
    };
    dict.x = dict.evaluate(time_points);
    Ok(dict)
}
