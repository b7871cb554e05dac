use crate::dsp::FeatureMap;
use crate::models::TASKS;
use crate::tensor::Tensor;

use super::{Result, TrainError};

/// Position of a task in `[accent, gender, age]` label triples.
pub fn task_label_index(task: &str) -> Option<usize> {
    TASKS.iter().position(|t| *t == task)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: Vec<f32>,
    /// Accent, gender, age.
    pub labels: [usize; 3],
}

/// In-memory feature maps with their labels, all of one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    shape: [usize; 3],
    examples: Vec<Example>,
}

impl FeatureSet {
    pub fn new(shape: [usize; 3]) -> Self {
        Self {
            shape,
            examples: Vec::new(),
        }
    }

    pub fn from_maps(shape: [usize; 3], maps: Vec<(FeatureMap, [usize; 3])>) -> Result<Self> {
        let mut set = Self::new(shape);
        for (fm, labels) in maps {
            set.push(fm, labels)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, fm: FeatureMap, labels: [usize; 3]) -> Result<()> {
        if fm.shape() != self.shape {
            return Err(TrainError::FeatureShape {
                actual: fm.shape(),
                source_id: fm.source,
                expected: self.shape,
            });
        }
        self.examples.push(Example {
            id: fm.source,
            features: fm.data,
            labels,
        });
        Ok(())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Stacks the selected examples into an `(n, c, h, w)` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(per * indices.len());
        for &i in indices {
            data.extend_from_slice(&self.examples[i].features);
        }
        let [c, h, w] = self.shape;
        Ok(Tensor::from_vec(data, &[indices.len(), c, h, w])?)
    }

    pub fn labels_for(&self, task: &str) -> Result<Vec<usize>> {
        self.labels_at(task, &(0..self.len()).collect::<Vec<_>>())
    }

    pub fn labels_at(&self, task: &str, indices: &[usize]) -> Result<Vec<usize>> {
        let k = task_label_index(task).ok_or_else(|| TrainError::UnknownTask(task.to_string()))?;
        Ok(indices.iter().map(|&i| self.examples[i].labels[k]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(id: &str, v: f32, frames: usize) -> FeatureMap {
        FeatureMap {
            source: id.into(),
            channels: 1,
            coeffs: 2,
            frames,
            data: vec![v; 2 * frames],
        }
    }

    #[test]
    fn batches_and_labels() {
        let set = FeatureSet::from_maps([1, 2, 3], vec![(map("a", 1.0, 3), [0, 1, 2]), (map("b", 2.0, 3), [5, 0, 4])]).unwrap();
        let x = set.batch(&[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 2, 3]);
        assert_eq!(x.data()[0], 2.0);
        assert_eq!(x.data()[6], 1.0);
        assert_eq!(set.labels_for("age").unwrap(), vec![2, 4]);
        assert_eq!(set.labels_at("accent", &[1]).unwrap(), vec![5]);
        assert!(matches!(set.labels_for("dialect"), Err(TrainError::UnknownTask(_))));
        let mut set = set;
        assert!(matches!(set.push(map("c", 0.0, 4), [0, 0, 0]), Err(TrainError::FeatureShape { .. })));
    }
}
