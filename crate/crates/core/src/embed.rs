//! Embedding table types (walk distributions and training land below).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{KcIdx, ProblemIdx, StudentIdx};

/// Node kind in the relational graph / embedding space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Student,
    Kc,
    Problem,
}

/// Learned d-dimensional vectors for every student, KC, and problem node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub students: Array2<f64>,
    pub kcs: Array2<f64>,
    pub problems: Array2<f64>,
}

impl EmbeddingTable {
    pub fn zeros(num_students: usize, num_kcs: usize, num_problems: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            students: Array2::zeros((num_students, dim)),
            kcs: Array2::zeros((num_kcs, dim)),
            problems: Array2::zeros((num_problems, dim)),
        }
    }

    pub fn student(&self, s: StudentIdx) -> ndarray::ArrayView1<'_, f64> {
        self.students.row(s.0)
    }

    pub fn kc(&self, k: KcIdx) -> ndarray::ArrayView1<'_, f64> {
        self.kcs.row(k.0)
    }

    pub fn problem(&self, p: ProblemIdx) -> ndarray::ArrayView1<'_, f64> {
        self.problems.row(p.0)
    }
}
