//! Dataset directory layout:
//!
//! - `features.csv`: one row per node, `k` comma-separated reals, no header
//! - `edges.csv`: header `src,dst`, zero-based, one row per undirected edge with `src < dst`
//! - `nodes.csv`: header `t,y` or `t,y,mu0,mu1`
//! - `splits.json`: `{"train": [...], "val": [...], "test": [...]}` (optional)
//! - `meta.json`: free-form provenance (optional)

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::graphdata::{Dataset, SplitIndex, Truth};

fn parse_f64(field: &str, file: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("{file}:{line}: '{field}' is not a number")))
}

fn parse_index(field: &str, file: &str, line: usize) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("{file}:{line}: '{field}' is not a node index")))
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().has_headers(headers).from_reader(file))
}

fn read_features(path: &Path) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader(path, false)?.records().enumerate() {
        let rec = rec?;
        rows.push(rec.iter().map(|f| parse_f64(f, "features.csv", i + 1)).collect::<Result<_>>()?);
    }
    Tensor::from_rows(&rows).map_err(|e| Error::Format(format!("features.csv: {e}")))
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut rdr = reader(path, true)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["src", "dst"] {
        return Err(Error::Format(format!("edges.csv header must be 'src,dst', got {header:?}")));
    }
    let mut edges = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::Format(format!("edges.csv:{}: expected 2 fields", i + 2)));
        }
        let (s, d) = (parse_index(&rec[0], "edges.csv", i + 2)?, parse_index(&rec[1], "edges.csv", i + 2)?);
        if s >= n || d >= n {
            return Err(Error::Format(format!("edges.csv:{}: node index out of range 0..{n}", i + 2)));
        }
        edges.push((s, d));
    }
    Ok(edges)
}

struct NodeColumns {
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    truth: Option<Truth>,
}

fn read_nodes(path: &Path) -> Result<NodeColumns> {
    let mut rdr = reader(path, true)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let with_truth = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["t", "y"] => false,
        ["t", "y", "mu0", "mu1"] => true,
        other => return Err(Error::Format(format!("nodes.csv header must be 't,y[,mu0,mu1]', got {other:?}"))),
    };
    let mut cols = NodeColumns { treatment: vec![], outcome: vec![], truth: None };
    let (mut mu0, mut mu1) = (vec![], vec![]);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Format(format!("nodes.csv:{line}: expected {} fields", header.len())));
        }
        let t = match rec[0].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::Format(format!("nodes.csv:{line}: treatment '{other}' is not 0/1"))),
        };
        cols.treatment.push(t);
        cols.outcome.push(parse_f64(&rec[1], "nodes.csv", line)?);
        if with_truth {
            mu0.push(parse_f64(&rec[2], "nodes.csv", line)?);
            mu1.push(parse_f64(&rec[3], "nodes.csv", line)?);
        }
    }
    if with_truth {
        cols.truth = Some(Truth { mu0, mu1 });
    }
    Ok(cols)
}

pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Format(format!("dataset directory {} does not exist", dir.display())));
    }
    let features = read_features(&dir.join("features.csv"))?;
    let nodes = read_nodes(&dir.join("nodes.csv"))?;
    let n = nodes.treatment.len();
    if features.rows() != n {
        return Err(Error::Format(format!("features.csv has {} rows, nodes.csv has {n}", features.rows())));
    }
    let edges = read_edges(&dir.join("edges.csv"), n)?;
    let adjacency = Dataset::adjacency_from_edges(n, &edges)?;
    let splits_path = dir.join("splits.json");
    let splits: Option<SplitIndex> = if splits_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&splits_path)?)?)
    } else {
        None
    };
    let meta_path = dir.join("meta.json");
    let meta: Value = if meta_path.exists() { serde_json::from_str(&fs::read_to_string(&meta_path)?)? } else { Value::Null };
    let ds = Dataset {
        features,
        adjacency,
        treatment: nodes.treatment,
        outcome: nodes.outcome,
        truth: nodes.truth,
        splits,
        meta,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join("features.csv"))?;
    for i in 0..dataset.n() {
        w.write_record(dataset.features.row_slice(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("edges.csv"))?;
    w.write_record(["src", "dst"])?;
    for (s, d) in dataset.edges() {
        w.write_record([s.to_string(), d.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("nodes.csv"))?;
    match &dataset.truth {
        Some(truth) => {
            w.write_record(["t", "y", "mu0", "mu1"])?;
            for i in 0..dataset.n() {
                w.write_record([
                    dataset.treatment[i].to_string(),
                    dataset.outcome[i].to_string(),
                    truth.mu0[i].to_string(),
                    truth.mu1[i].to_string(),
                ])?;
            }
        }
        None => {
            w.write_record(["t", "y"])?;
            for i in 0..dataset.n() {
                w.write_record([dataset.treatment[i].to_string(), dataset.outcome[i].to_string()])?;
            }
        }
    }
    w.flush()?;

    let splits_path = dir.join("splits.json");
    match &dataset.splits {
        Some(s) => fs::write(&splits_path, serde_json::to_string(s)?)?,
        None if splits_path.exists() => fs::remove_file(&splits_path)?,
        None => {}
    }
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&dataset.meta)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn toy(with_truth: bool) -> Dataset {
        let features = Tensor::matrix(4, 2, vec![0.1, -2.5, 3.0, 1e-17, -0.0, 7.25, 1.0 / 3.0, 2.0]).unwrap();
        Dataset {
            features,
            adjacency: Dataset::adjacency_from_edges(4, &[(0, 1), (1, 3), (2, 3)]).unwrap(),
            treatment: vec![1, 0, 0, 1],
            outcome: vec![0.5, -1.25, std::f64::consts::PI, 2.0],
            truth: with_truth.then(|| Truth { mu0: vec![0.0, 1.0, 2.0, 0.1], mu1: vec![1.0, 1.5, -2.0, 0.2] }),
            splits: None,
            meta: json!({"generator": "toy", "n": 4}),
        }
    }

    #[test]
    fn save_then_load_is_identity() {
        for truth in [true, false] {
            let dir = tempfile::tempdir().unwrap();
            let ds = toy(truth);
            save(&ds, dir.path()).unwrap();
            assert_eq!(load(dir.path()).unwrap(), ds);
        }
    }

    #[test]
    fn non_canonical_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save(&toy(true), dir.path()).unwrap();
        fs::write(dir.path().join("edges.csv"), "src,dst\n1,0\n").unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save(&toy(true), dir.path()).unwrap();
        fs::write(dir.path().join("edges.csv"), "src,dst\n0,9\n").unwrap();
        assert!(load(dir.path()).is_err());
    }

    #[test]
    fn duplicate_edge_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save(&toy(true), dir.path()).unwrap();
        fs::write(dir.path().join("edges.csv"), "src,dst\n0,1\n0,1\n").unwrap();
        assert!(load(dir.path()).is_err());
    }

    #[test]
    fn missing_truth_columns_load_as_absent() {
        let dir = tempfile::tempdir().unwrap();
        save(&toy(false), dir.path()).unwrap();
        assert!(load(dir.path()).unwrap().truth.is_none());
    }

    #[test]
    fn missing_directory() {
        assert!(load("/definitely/not/here").is_err());
    }

    #[test]
    fn malformed_number() {
        let dir = tempfile::tempdir().unwrap();
        save(&toy(true), dir.path()).unwrap();
        fs::write(dir.path().join("features.csv"), "0,1\nx,2\n0,0\n1,1\n").unwrap();
        assert!(load(dir.path()).is_err());
    }
}
