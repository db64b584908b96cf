use serde_json::Value;

use crate::diffcore::{SparseMatrix, Tensor};
use crate::error::{Error, Result};
use crate::graphdata::SplitIndex;

/// Noiseless potential-outcome means.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl Truth {
    pub fn ite(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x k` covariates.
    pub features: Tensor,
    /// Symmetric 0/1 adjacency with an empty diagonal.
    pub adjacency: SparseMatrix,
    pub treatment: Vec<u8>,
    pub outcome: Vec<f64>,
    pub truth: Option<Truth>,
    pub splits: Option<SplitIndex>,
    /// Free-form provenance.
    pub meta: Value,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn k(&self) -> usize {
        self.features.cols()
    }

    /// Builds the symmetric adjacency from undirected edges `(i, j)`, `i < j`.
    pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<SparseMatrix> {
        let mut entries = Vec::with_capacity(edges.len() * 2);
        for &(i, j) in edges {
            if i >= j {
                return Err(Error::Format(format!("edge ({i},{j}) is not in canonical src<dst form")));
            }
            if j >= n {
                return Err(Error::Format(format!("edge ({i},{j}) references node outside 0..{n}")));
            }
            entries.push((i, j, 1.0));
            entries.push((j, i, 1.0));
        }
        SparseMatrix::from_triplets(n, n, entries).map_err(|e| Error::Format(format!("edge list: {e}")))
    }

    /// Undirected edges with `src < dst`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency.triplets().filter(|&(i, j, _)| i < j).map(|(i, j, _)| (i, j)).collect()
    }

    pub fn ite(&self) -> Option<Vec<f64>> {
        self.truth.as_ref().map(Truth::ite)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if !self.features.is_matrix() || self.features.rows() != n {
            return Err(Error::Format(format!("features shape {:?} for {n} nodes", self.features.shape())));
        }
        if self.outcome.len() != n {
            return Err(Error::Format(format!("{} outcomes for {n} nodes", self.outcome.len())));
        }
        if self.adjacency.n_rows() != n || self.adjacency.n_cols() != n {
            return Err(Error::Format("adjacency size does not match node count".into()));
        }
        for (i, j, v) in self.adjacency.triplets() {
            if i == j {
                return Err(Error::Format(format!("self loop at node {i}")));
            }
            if v != 1.0 {
                return Err(Error::Format(format!("edge ({i},{j}) has weight {v}")));
            }
        }
        if !self.adjacency.is_symmetric() {
            return Err(Error::Format("adjacency is not symmetric".into()));
        }
        if let Some(bad) = self.treatment.iter().find(|&&t| t > 1) {
            return Err(Error::Format(format!("treatment value {bad} is not 0/1")));
        }
        if !self.features.all_finite() || self.outcome.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite feature or outcome".into()));
        }
        if let Some(truth) = &self.truth {
            if truth.mu0.len() != n || truth.mu1.len() != n {
                return Err(Error::Format("truth length does not match node count".into()));
            }
            if truth.ite().iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("non-finite ground-truth effect".into()));
            }
        }
        if let Some(splits) = &self.splits {
            splits.validate(n)?;
        }
        Ok(())
    }
}
