//! Built-in downstream task: antialiased geometric shapes with seeded jitter
//! and additive Gaussian pixel noise.
//!
//! Sample `index` of class `c` in split `s` draws from substream
//! `(c << 32) | index` of the split seed `substream_seed(seed, s)` (train 0,
//! test 1), so splits never share a random stream.

use std::f64::consts::PI;
use std::str::FromStr;

use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::rng::{substream_seed, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Disk,
    Square,
    Cross,
    Ring,
    Triangle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Disk,
        ShapeClass::Square,
        ShapeClass::Cross,
        ShapeClass::Ring,
        ShapeClass::Triangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Disk => "disk",
            ShapeClass::Square => "square",
            ShapeClass::Cross => "cross",
            ShapeClass::Ring => "ring",
            ShapeClass::Triangle => "triangle",
        }
    }

    /// Membership test in shape-local coordinates (unit circumradius).
    fn contains(self, x: f64, y: f64) -> bool {
        match self {
            ShapeClass::Disk => x * x + y * y <= 1.0,
            ShapeClass::Square => x.abs().max(y.abs()) <= 0.75,
            ShapeClass::Cross => {
                (x.abs() <= 0.3 && y.abs() <= 1.0) || (y.abs() <= 0.3 && x.abs() <= 1.0)
            }
            ShapeClass::Ring => {
                let r2 = x * x + y * y;
                (0.36..=1.0).contains(&r2)
            }
            ShapeClass::Triangle => {
                // Equilateral, apex up, inradius 0.5: three half-planes.
                let s3 = 3f64.sqrt() / 2.0;
                -y <= 0.5 && (s3 * x + 0.5 * y) <= 0.5 && (-s3 * x + 0.5 * y) <= 0.5
            }
        }
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown shape class {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapesTask {
    pub classes: Vec<ShapeClass>,
    /// Images are `size x size x 1`.
    pub size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Center offset per axis, uniform in `+-position_jitter * size`.
    pub position_jitter: f64,
    /// Circumradius as a fraction of `size`, uniform in this range.
    pub scale_range: (f64, f64),
    /// Rotation uniform in `+-rotation_jitter` radians.
    pub rotation_jitter: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl ShapesTask {
    /// Five classes, 50 train and 100 test images per class, 32x32.
    pub fn standard(seed: u64) -> Self {
        ShapesTask {
            classes: ShapeClass::ALL.to_vec(),
            size: 32,
            train_per_class: 50,
            test_per_class: 100,
            position_jitter: 0.1,
            scale_range: (0.22, 0.34),
            rotation_jitter: PI / 6.0,
            noise_level: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("shapes task needs at least one class".into()));
        }
        if self.size < 4 {
            return Err(Error::InvalidConfig(format!("image size {} is too small", self.size)));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig("each split needs at least one sample per class".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidConfig(format!("bad scale range ({lo}, {hi})")));
        }
        if self.position_jitter < 0.0 || self.rotation_jitter < 0.0 || self.noise_level < 0.0 {
            return Err(Error::InvalidConfig("jitter and noise must be non-negative".into()));
        }
        Ok(())
    }

    /// Renders one `[size, size, 1]` image.
    pub fn render(&self, class: usize, split: u64, index: usize) -> Vec<f64> {
        let shape = self.classes[class];
        let mut rng = Rng::substream(substream_seed(self.seed, split), ((class as u64) << 32) | index as u64);
        let n = self.size as f64;
        let jitter = self.position_jitter * n;
        let cx = n / 2.0 + draw(&mut rng, -jitter, jitter);
        let cy = n / 2.0 + draw(&mut rng, -jitter, jitter);
        let radius = n * draw(&mut rng, self.scale_range.0, self.scale_range.1);
        let angle = draw(&mut rng, -self.rotation_jitter, self.rotation_jitter);
        let (sin, cos) = (libm::sin(angle), libm::cos(angle));

        const SUB: usize = 4;
        let mut img = Vec::with_capacity(self.size * self.size);
        for i in 0..self.size {
            for j in 0..self.size {
                let mut hits = 0;
                for si in 0..SUB {
                    for sj in 0..SUB {
                        let px = i as f64 + (si as f64 + 0.5) / SUB as f64 - cx;
                        let py = j as f64 + (sj as f64 + 0.5) / SUB as f64 - cy;
                        // Rotate into the shape frame; y grows downward in
                        // images, so flip it to keep the triangle apex up.
                        let lx = (cos * px + sin * py) / radius;
                        let ly = (-sin * px + cos * py) / radius;
                        if shape.contains(lx, -ly) {
                            hits += 1;
                        }
                    }
                }
                img.push(hits as f64 / (SUB * SUB) as f64);
            }
        }
        if self.noise_level > 0.0 {
            for v in &mut img {
                *v = (*v + self.noise_level * rng.gaussian()).clamp(0.0, 1.0);
            }
        }
        img
    }

    fn split(&self, split: u64, per_class: usize) -> LabeledData {
        let k = self.classes.len();
        let pixels = self.size * self.size;
        let mut data = Vec::with_capacity(k * per_class * pixels);
        let mut labels = Vec::with_capacity(k * per_class);
        for class in 0..k {
            for index in 0..per_class {
                data.extend(self.render(class, split, index));
                labels.push(class);
            }
        }
        let inputs = Tensor::from_vec(&[k * per_class, self.size, self.size, 1], data).expect("split shape");
        LabeledData::new(inputs, labels, k).expect("labels within classes")
    }
}

fn draw(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    // Degenerate ranges still consume a draw so streams stay aligned.
    let u = rng.next_f64();
    lo + (hi - lo) * u
}

/// `(train, test)`, each class-major with exact class balance.
pub fn make_shapes_dataset(task: &ShapesTask) -> Result<(LabeledData, LabeledData)> {
    task.validate()?;
    Ok((task.split(0, task.train_per_class), task.split(1, task.test_per_class)))
}

/// Accuracy of assigning each test image to the nearest class mean of the
/// training images (Euclidean).
pub fn nearest_centroid_accuracy(train: &LabeledData, test: &LabeledData) -> f64 {
    let dim = train.sample(0).len();
    let k = train.num_classes();
    let mut centroids = vec![vec![0.0; dim]; k];
    for (i, &y) in train.labels().iter().enumerate() {
        for (c, x) in centroids[y].iter_mut().zip(train.sample(i)) {
            *c += x;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&train.class_counts()) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = (0..test.len())
        .filter(|&i| {
            let x = test.sample(i);
            let best = (0..k)
                .map(|c| centroids[c].iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .enumerate()
                .fold((0, f64::INFINITY), |best, (c, d)| if d < best.1 { (c, d) } else { best })
                .0;
            best == test.labels()[i]
        })
        .count();
    correct as f64 / test.len() as f64
}
