//! Labeled Perlin noise.
//!
//! A sample of category `(n, m)` is gradient noise on a `2^n x 2^m` cell grid
//! laid over a `W x H` canvas. Random gradient vectors sit on the
//! `(2^n + 1) x (2^m + 1)` lattice; each pixel takes the dot products of the
//! four surrounding gradients with its offsets from those corners and blends
//! them bilinearly. Coarser grids give smoother noise, so the grid exponents
//! double as a class label `y = (n - 1) M + m`.
//!
//! Coordinates: a plane is a `[W, H]` tensor indexed `[x][y]`; grid coordinate
//! `u` runs along `x` over `[0, 2^n]` and `v` along `y` over `[0, 2^m]`.

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest supported grid exponent.
pub const MAX_EXPONENT: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridSpec {
    n: u32,
    m: u32,
    width: usize,
    height: usize,
}

impl GridSpec {
    pub fn new(n: u32, m: u32, width: usize, height: usize) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::InvalidGrid(format!(
                "grid exponents must be at least 1 (got n = {n}, m = {m})"
            )));
        }
        if n > MAX_EXPONENT || m > MAX_EXPONENT {
            return Err(Error::InvalidGrid(format!(
                "grid exponents above {MAX_EXPONENT} are not supported (got n = {n}, m = {m})"
            )));
        }
        if (1usize << n) > width {
            return Err(Error::InvalidGrid(format!(
                "2^n = {} exceeds width W = {width}; each cell must span at least one pixel (2^n <= W)",
                1usize << n
            )));
        }
        if (1usize << m) > height {
            return Err(Error::InvalidGrid(format!(
                "2^m = {} exceeds height H = {height}; each cell must span at least one pixel (2^m <= H)",
                1usize << m
            )));
        }
        Ok(GridSpec {
            n,
            m,
            width,
            height,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Cells along x and y: `(2^n, 2^m)`.
    pub fn cells(&self) -> (usize, usize) {
        (1 << self.n, 1 << self.m)
    }

    /// Lattice points along x and y: `(2^n + 1, 2^m + 1)`.
    pub fn lattice_dims(&self) -> (usize, usize) {
        let (cx, cy) = self.cells();
        (cx + 1, cy + 1)
    }

    /// Pixel-space position of lattice point `(p, q)`.
    pub fn lattice_point_px(&self, p: usize, q: usize) -> (f64, f64) {
        let (cx, cy) = self.cells();
        (
            p as f64 * self.width as f64 / cx as f64,
            q as f64 * self.height as f64 / cy as f64,
        )
    }

    /// Grid coordinates of the center of pixel `(i, j)`.
    #[inline]
    pub fn pixel_to_grid(&self, i: usize, j: usize) -> (f64, f64) {
        let (cx, cy) = self.cells();
        (
            (i as f64 + 0.5) * cx as f64 / self.width as f64,
            (j as f64 + 0.5) * cy as f64 / self.height as f64,
        )
    }

    /// Magnitude cap of the gradient vectors, `0.01 * max(W, H)`.
    pub fn radius(&self) -> f64 {
        0.01 * self.width.max(self.height) as f64
    }
}

pub fn make_grid(n: u32, m: u32, width: usize, height: usize) -> Result<GridSpec> {
    GridSpec::new(n, m, width, height)
}

/// Blend weights applied to the in-cell fractional position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Interpolation {
    /// Plain bilinear interpolation.
    #[default]
    Linear,
    /// Classical `3t^2 - 2t^3` fade applied before blending.
    Smoothstep,
}

impl Interpolation {
    #[inline]
    fn weight(self, t: f64) -> f64 {
        match self {
            Interpolation::Linear => t,
            Interpolation::Smoothstep => t * t * (3.0 - 2.0 * t),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    grid: GridSpec,
    /// Indexed `p * (2^m + 1) + q`.
    vectors: Vec<[f64; 2]>,
    radius: f64,
    seed: u64,
    interpolation: Interpolation,
}

impl GradientField {
    /// Random gradients with magnitude in `[0, R)` and angle in `[0, 2pi)`.
    /// Vector `(p, q)` is drawn from its own substream `(p << 32) | q`, so it
    /// depends only on the seed and its lattice position.
    pub fn sample(grid: GridSpec, seed: u64) -> Self {
        let radius = grid.radius();
        let (lx, ly) = grid.lattice_dims();
        let mut vectors = Vec::with_capacity(lx * ly);
        for p in 0..lx {
            for q in 0..ly {
                vectors.push(lattice_vector(seed, p, q, radius));
            }
        }
        GradientField {
            grid,
            vectors,
            radius,
            seed,
            interpolation: Interpolation::Linear,
        }
    }

    /// Field with caller-supplied gradients, indexed `p * (2^m + 1) + q`.
    pub fn from_vectors(grid: GridSpec, vectors: Vec<[f64; 2]>) -> Result<Self> {
        let (lx, ly) = grid.lattice_dims();
        if vectors.len() != lx * ly {
            return Err(Error::Shape(format!(
                "grid needs {} lattice vectors, got {}",
                lx * ly,
                vectors.len()
            )));
        }
        Ok(GradientField {
            grid,
            vectors,
            radius: grid.radius(),
            seed: 0,
            interpolation: Interpolation::Linear,
        })
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn vectors(&self) -> &[[f64; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn vector(&self, p: usize, q: usize) -> [f64; 2] {
        self.vectors[p * (self.grid.lattice_dims().1) + q]
    }

    /// Noise value at grid coordinates `(u, v)` on the closed domain
    /// `[0, 2^n] x [0, 2^m]`.
    pub fn eval(&self, u: f64, v: f64) -> Result<f64> {
        let (cx, cy) = self.grid.cells();
        let (max_u, max_v) = (cx as f64, cy as f64);
        if !(0.0..=max_u).contains(&u) || !(0.0..=max_v).contains(&v) {
            return Err(Error::OutOfDomain { u, v, max_u, max_v });
        }
        Ok(self.eval_in_domain(u, v))
    }

    #[inline]
    fn eval_in_domain(&self, u: f64, v: f64) -> f64 {
        let (cx, cy) = self.grid.cells();
        let ly = cy + 1;
        // The top/right boundary belongs to the last cell (fraction 1.0).
        let i = (u.floor() as usize).min(cx - 1);
        let j = (v.floor() as usize).min(cy - 1);
        let fx = u - i as f64;
        let fy = v - j as f64;

        let g00 = self.vectors[i * ly + j];
        let g10 = self.vectors[(i + 1) * ly + j];
        let g01 = self.vectors[i * ly + j + 1];
        let g11 = self.vectors[(i + 1) * ly + j + 1];

        let d00 = g00[0] * fx + g00[1] * fy;
        let d10 = g10[0] * (fx - 1.0) + g10[1] * fy;
        let d01 = g01[0] * fx + g01[1] * (fy - 1.0);
        let d11 = g11[0] * (fx - 1.0) + g11[1] * (fy - 1.0);

        let wx = self.interpolation.weight(fx);
        let wy = self.interpolation.weight(fy);
        let bottom = (1.0 - wx) * d00 + wx * d10;
        let top = (1.0 - wx) * d01 + wx * d11;
        (1.0 - wy) * bottom + wy * top
    }

    /// Noise sampled at every pixel center, as a `[W, H]` plane.
    pub fn render(&self) -> Tensor {
        let (w, h) = (self.grid.width, self.grid.height);
        let mut data = Vec::with_capacity(w * h);
        for i in 0..w {
            for j in 0..h {
                let (u, v) = self.grid.pixel_to_grid(i, j);
                data.push(self.eval_in_domain(u, v));
            }
        }
        Tensor::from_vec(&[w, h], data).expect("plane shape")
    }
}

fn lattice_vector(seed: u64, p: usize, q: usize, radius: f64) -> [f64; 2] {
    let mut rng = Rng::substream(seed, ((p as u64) << 32) | q as u64);
    let magnitude = rng.uniform(0.0, radius).expect("radius is positive");
    let angle = rng.uniform(0.0, TAU).expect("nonempty range");
    [magnitude * libm::cos(angle), magnitude * libm::sin(angle)]
}

pub fn sample_gradient_field(grid: GridSpec, seed: u64) -> GradientField {
    GradientField::sample(grid, seed)
}

pub fn eval_noise(field: &GradientField, u: f64, v: f64) -> Result<f64> {
    field.eval(u, v)
}

pub fn render_noise(field: &GradientField) -> Tensor {
    field.render()
}

/// Affine min-max map onto `[0, 1]`; a constant plane becomes all 0.5.
pub fn normalize_plane(plane: &Tensor) -> Tensor {
    let (lo, hi) = plane.min_max();
    if !(hi > lo) {
        return Tensor::filled(plane.shape(), 0.5);
    }
    let span = hi - lo;
    plane.map(|x| (x - lo) / span)
}

/// Category of grid exponents `(n, m)`: `y = (n - 1) M + m`.
pub fn noise_label(n: u32, m: u32, m_max: u32) -> Result<u32> {
    if n < 1 {
        return Err(Error::InvalidParameter(format!("n must be at least 1, got {n}")));
    }
    if m < 1 || m > m_max {
        return Err(Error::InvalidParameter(format!(
            "m must lie in 1..={m_max}, got {m}"
        )));
    }
    (n - 1)
        .checked_mul(m_max)
        .and_then(|x| x.checked_add(m))
        .ok_or_else(|| Error::InvalidParameter(format!("label overflow for n = {n}, M = {m_max}")))
}

/// Inverse of [`noise_label`]: `n = ceil(y / M)`, `m = y - (n - 1) M`.
pub fn label_to_params(y: u32, m_max: u32) -> Result<(u32, u32)> {
    if y < 1 {
        return Err(Error::InvalidParameter(format!("label must be at least 1, got {y}")));
    }
    if m_max < 1 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let n = (y - 1) / m_max + 1;
    Ok((n, y - (n - 1) * m_max))
}

/// How the `C` channel planes of a sample are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ChannelMode {
    /// One grayscale plane copied into every channel.
    #[default]
    Replicate,
    /// An independent field per channel.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DatasetConfig {
    /// Largest `n` (categories along x).
    pub n_max: u32,
    /// Largest `m` (categories along y).
    pub m_max: u32,
    /// Samples per category.
    pub per_category: u32,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub master_seed: u64,
    pub interpolation: Interpolation,
    pub channel_mode: ChannelMode,
}

impl DatasetConfig {
    pub fn new(
        n_max: u32,
        m_max: u32,
        per_category: u32,
        width: usize,
        height: usize,
        channels: usize,
        master_seed: u64,
    ) -> Self {
        DatasetConfig {
            n_max,
            m_max,
            per_category,
            width,
            height,
            channels,
            master_seed,
            interpolation: Interpolation::Linear,
            channel_mode: ChannelMode::Replicate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_max < 1 || self.m_max < 1 {
            return bad(format!(
                "N and M must be at least 1 (got N = {}, M = {})",
                self.n_max, self.m_max
            ));
        }
        if self.per_category < 1 {
            return bad("K must be at least 1".into());
        }
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return bad(format!(
                "W, H and C must be positive (got {}x{}x{})",
                self.width, self.height, self.channels
            ));
        }
        if self.n_max > MAX_EXPONENT || (1usize << self.n_max) > self.width {
            return bad(format!(
                "2^N must not exceed W (the constraint 2^N <= W): N = {}, W = {}",
                self.n_max, self.width
            ));
        }
        if self.m_max > MAX_EXPONENT || (1usize << self.m_max) > self.height {
            return bad(format!(
                "2^M must not exceed H (the constraint 2^M <= H): M = {}, H = {}",
                self.m_max, self.height
            ));
        }
        let total = self.n_max as u64 * self.m_max as u64 * self.per_category as u64;
        if total > u32::MAX as u64 {
            return bad(format!("T = NMK = {total} is too large"));
        }
        Ok(())
    }

    pub fn num_categories(&self) -> usize {
        (self.n_max * self.m_max) as usize
    }

    /// `T = N M K`.
    pub fn total_samples(&self) -> usize {
        self.num_categories() * self.per_category as usize
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.width, self.height, self.channels]
    }

    /// Stable 64-bit digest (FNV-1a over the canonical little-endian encoding).
    pub fn fingerprint(&self) -> u64 {
        crate::io::fnv1a(&crate::io::archive::encode_config(self))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSample {
    /// `[W, H, C]`, min-max normalized.
    pub values: Tensor,
    /// Category in `1..=NM`.
    pub label: u32,
    pub n: u32,
    pub m: u32,
    /// Index within the category, `1..=K`.
    pub index: u32,
    /// Seed of the (first) gradient field.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDataset {
    pub config: DatasetConfig,
    /// Category-major: all `K` samples of label 1, then label 2, ...
    pub samples: Vec<NoiseSample>,
}

impl NoiseDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Inputs and zero-based class indices for training.
    pub fn to_labeled(&self) -> crate::data::LabeledData {
        let [w, h, c] = self.config.input_shape();
        let mut inputs = Vec::with_capacity(self.len() * w * h * c);
        for s in &self.samples {
            inputs.extend_from_slice(s.values.data());
        }
        crate::data::LabeledData::new(
            Tensor::from_vec(&[self.len(), w, h, c], inputs).expect("sample shapes"),
            self.samples.iter().map(|s| (s.label - 1) as usize).collect(),
            self.config.num_categories(),
        )
        .expect("labels within category count")
    }
}

/// Sample `i` (zero-based, category-major) of the dataset described by `cfg`.
/// Drawn from substream `(y - 1) K + k` of the master seed, with `k` the
/// one-based position inside the category, so it equals `i + 1`.
pub fn generate_sample(cfg: &DatasetConfig, i: usize) -> Result<NoiseSample> {
    cfg.validate()?;
    if i >= cfg.total_samples() {
        return Err(Error::InvalidParameter(format!(
            "sample index {i} out of range for T = {}",
            cfg.total_samples()
        )));
    }
    Ok(generate_unchecked(cfg, i))
}

fn generate_unchecked(cfg: &DatasetConfig, i: usize) -> NoiseSample {
    let k_per = cfg.per_category as usize;
    let label = (i / k_per + 1) as u32;
    let index = (i % k_per + 1) as u32;
    let (n, m) = label_to_params(label, cfg.m_max).expect("label >= 1");
    let grid = GridSpec::new(n, m, cfg.width, cfg.height).expect("validated config");

    let stream = (label as u64 - 1) * cfg.per_category as u64 + index as u64;
    let mut rng = Rng::substream(cfg.master_seed, stream);
    let seed = rng.next_u64();
    let plane_for = |field_seed: u64| {
        let field = GradientField::sample(grid, field_seed).with_interpolation(cfg.interpolation);
        normalize_plane(&field.render())
    };

    let (w, h, c) = (cfg.width, cfg.height, cfg.channels);
    let mut planes = vec![plane_for(seed)];
    if cfg.channel_mode == ChannelMode::Independent {
        for _ in 1..c {
            planes.push(plane_for(rng.next_u64()));
        }
    }
    let mut values = vec![0.0; w * h * c];
    for (px, chunk) in values.chunks_exact_mut(c).enumerate() {
        for (ch, slot) in chunk.iter_mut().enumerate() {
            *slot = planes[ch.min(planes.len() - 1)].data()[px];
        }
    }
    NoiseSample {
        values: Tensor::from_vec(&[w, h, c], values).expect("sample shape"),
        label,
        n,
        m,
        index,
        seed,
    }
}

/// All `T = NMK` samples in category-major order. Samples render in parallel;
/// each depends only on `(cfg, i)`.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<NoiseDataset> {
    cfg.validate()?;
    let samples = (0..cfg.total_samples())
        .into_par_iter()
        .map(|i| generate_unchecked(cfg, i))
        .collect();
    Ok(NoiseDataset {
        config: *cfg,
        samples,
    })
}

/// Mean absolute forward difference along x plus the same along y, on
/// channel 0 of a `[W, H, C]` sample or a `[W, H]` plane.
pub fn gradient_energy(values: &Tensor) -> f64 {
    let shape = values.shape();
    let (w, h) = (shape[0], shape[1]);
    let c = if shape.len() > 2 { shape[2] } else { 1 };
    let at = |i: usize, j: usize| values.data()[(i * h + j) * c];
    let mut dx = 0.0;
    for i in 0..w.saturating_sub(1) {
        for j in 0..h {
            dx += (at(i + 1, j) - at(i, j)).abs();
        }
    }
    let mut dy = 0.0;
    for i in 0..w {
        for j in 0..h.saturating_sub(1) {
            dy += (at(i, j + 1) - at(i, j)).abs();
        }
    }
    let mean_dx = if w > 1 { dx / ((w - 1) * h) as f64 } else { 0.0 };
    let mean_dy = if h > 1 { dy / (w * (h - 1)) as f64 } else { 0.0 };
    mean_dx + mean_dy
}

/// Mean [`gradient_energy`] per category; entry `y - 1` belongs to label `y`.
pub fn category_energy(ds: &NoiseDataset) -> Vec<f64> {
    let mut sums = vec![0.0; ds.config.num_categories()];
    let mut counts = vec![0usize; sums.len()];
    for s in &ds.samples {
        sums[s.label as usize - 1] += gradient_energy(&s.values);
        counts[s.label as usize - 1] += 1;
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect()
}
