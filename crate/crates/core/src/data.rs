//! Labeled datasets of input tensors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct LabeledDataset {
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::config(
                "labels",
                format!("{} inputs but {} labels", inputs.len(), labels.len()),
            ));
        }
        if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::config(
                "labels",
                format!("label {bad} at index {i} >= num_classes {num_classes}"),
            ));
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Indices of all examples of one class.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }
}
