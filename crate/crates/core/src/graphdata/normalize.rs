use crate::diffcore::SparseMatrix;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the degree matrix of `A + I`.
pub fn normalize_adjacency(adjacency: &SparseMatrix) -> SparseMatrix {
    let n = adjacency.n_rows();
    let degree: Vec<f64> = (0..n).map(|i| 1.0 + adjacency.row(i).map(|(_, v)| v).sum::<f64>()).collect();
    let mut entries = Vec::with_capacity(adjacency.nnz() + n);
    for i in 0..n {
        entries.push((i, i, 1.0 / degree[i]));
        for (j, v) in adjacency.row(i) {
            entries.push((i, j, v / (degree[i] * degree[j]).sqrt()));
        }
    }
    SparseMatrix::from_triplets(n, n, entries).expect("adjacency without self loops")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;
    use crate::graphdata::Dataset;

    /// Dense `D̃^{-1/2} Ã D̃^{-1/2}` straight from the definition.
    fn dense_oracle(n: usize, edges: &[(usize, usize)]) -> Tensor {
        let mut a = Tensor::identity(n);
        for &(i, j) in edges {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
        let d: Vec<f64> = (0..n).map(|i| a.row_slice(i).iter().sum()).collect();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, a.get(i, j) / (d[i] * d[j]).sqrt());
            }
        }
        out
    }

    #[test]
    fn isolated_node() {
        let a = Dataset::adjacency_from_edges(1, &[]).unwrap();
        assert_eq!(normalize_adjacency(&a).to_dense().data(), &[1.0]);
    }

    #[test]
    fn single_edge_is_all_halves() {
        let a = Dataset::adjacency_from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(normalize_adjacency(&a).to_dense().data(), &[0.5; 4]);
    }

    #[test]
    fn path_matches_dense_oracle_and_is_contractive() {
        let edges = [(0, 1), (1, 2)];
        let a = Dataset::adjacency_from_edges(3, &edges).unwrap();
        let got = normalize_adjacency(&a).to_dense();
        let want = dense_oracle(3, &edges);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-15);
        }
        // power iteration bound on the spectral radius
        let mut v = vec![1.0, 0.3, -0.7];
        let mut ratio = 0.0;
        for _ in 0..200 {
            let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| got.get(i, j) * v[j]).sum()).collect();
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            ratio = nw / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.iter().map(|x| x / nw).collect();
        }
        assert!(ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn regular_graph_edges_map_to_inverse_degree() {
        // 4-cycle is 2-regular
        let a = Dataset::adjacency_from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let s = normalize_adjacency(&a);
        for (_, _, v) in s.triplets() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}
