use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images `[N, W, H, C]` with zero-based class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledData {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledData {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rank() != 4 {
            return Err(Error::Shape(format!(
                "expected [N, W, H, C] inputs, got {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} images but {} labels",
                inputs.shape()[0],
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(LabeledData {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// `[W, H, C]`.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.inputs.shape();
        [s[1], s[2], s[3]]
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Rows `indices` in the given order.
    pub fn select(&self, indices: &[usize]) -> LabeledData {
        let [w, h, c] = self.input_shape();
        let mut data = Vec::with_capacity(indices.len() * w * h * c);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        LabeledData {
            inputs: Tensor::from_vec(&[indices.len(), w, h, c], data).expect("selected shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}
