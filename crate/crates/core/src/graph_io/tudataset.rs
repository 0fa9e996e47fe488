//! Reader and writer for the TUDataset plain-text layout.
//!
//! A dataset `DS` lives in one directory as comma-separated, 1-indexed text
//! files: `DS_A.txt` (edge list), `DS_graph_indicator.txt` (graph id of each
//! node), `DS_graph_labels.txt` (one label per graph) and optionally
//! `DS_node_labels.txt`.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::graph::{AttributedGraph, DomainDataset, DomainRole};
use crate::error::{Error, Result};

fn dataset_file(root: &Path, name: &str, suffix: &str) -> PathBuf {
    root.join(format!("{name}_{suffix}.txt"))
}

fn read_required(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::Format {
            file: path.to_path_buf(),
            message: "required file is missing".into(),
        });
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers; tolerates CRLF.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_int(path: &Path, line: usize, token: &str) -> Result<i64> {
    token.trim().parse::<i64>().map_err(|_| Error::Parse {
        file: path.to_path_buf(),
        line,
        token: token.trim().to_string(),
    })
}

fn parse_column(path: &Path, text: &str) -> Result<Vec<(usize, i64)>> {
    content_lines(text)
        .map(|(line, l)| {
            // Node-label files may carry extra comma-separated columns; the
            // first one is the label.
            let first = l.split(',').next().unwrap_or(l);
            Ok((line, parse_int(path, line, first)?))
        })
        .collect()
}

/// Parses dataset `name` from directory `root`.
///
/// Node features are one-hot node labels when `DS_node_labels.txt` exists,
/// otherwise a single constant-1 column. Graph labels are remapped to
/// `0..C` in ascending order of the raw value.
pub fn parse_tudataset(root: impl AsRef<Path>, name: &str) -> Result<DomainDataset> {
    let root = root.as_ref();
    let a_path = dataset_file(root, name, "A");
    let ind_path = dataset_file(root, name, "graph_indicator");
    let lab_path = dataset_file(root, name, "graph_labels");
    let node_lab_path = dataset_file(root, name, "node_labels");

    let a_text = read_required(&a_path)?;
    let ind_text = read_required(&ind_path)?;
    let lab_text = read_required(&lab_path)?;

    let indicator = parse_column(&ind_path, &ind_text)?;
    let total_nodes = indicator.len();
    if total_nodes == 0 {
        return Err(Error::Format {
            file: ind_path,
            message: "no nodes".into(),
        });
    }
    let mut graph_of = Vec::with_capacity(total_nodes);
    for &(line, gid) in &indicator {
        if gid < 1 {
            return Err(Error::Index {
                file: ind_path.clone(),
                line,
                message: format!("graph id {gid} is not 1-indexed"),
            });
        }
        graph_of.push((gid - 1) as usize);
    }

    let raw_labels = parse_column(&lab_path, &lab_text)?;
    let graph_count = raw_labels.len();
    if let Some(&(line, _)) = indicator.iter().find(|&&(_, g)| g as usize > graph_count) {
        return Err(Error::Index {
            file: ind_path,
            line,
            message: format!("graph id exceeds the {graph_count} graph labels"),
        });
    }

    // Local node index inside its graph, in order of appearance.
    let mut sizes = vec![0usize; graph_count];
    let mut local = Vec::with_capacity(total_nodes);
    for &g in &graph_of {
        local.push(sizes[g]);
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Format {
            file: ind_path,
            message: format!("graph {} has no nodes", empty + 1),
        });
    }

    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); graph_count];
    for (line, l) in content_lines(&a_text) {
        let mut parts = l.split(',');
        let (Some(r), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format {
                file: a_path.clone(),
                message: format!("line {line}: expected \"row, col\""),
            });
        };
        let r = parse_int(&a_path, line, r)?;
        let c = parse_int(&a_path, line, c)?;
        let check = |v: i64| -> Result<usize> {
            if v < 1 || v as usize > total_nodes {
                Err(Error::Index {
                    file: a_path.clone(),
                    line,
                    message: format!("node {v} outside indicator range 1..={total_nodes}"),
                })
            } else {
                Ok((v - 1) as usize)
            }
        };
        let (u, v) = (check(r)?, check(c)?);
        if graph_of[u] != graph_of[v] {
            return Err(Error::Index {
                file: a_path.clone(),
                line,
                message: format!("edge ({r}, {c}) joins two different graphs"),
            });
        }
        if u == v {
            continue;
        }
        let (lu, lv) = (local[u], local[v]);
        edge_sets[graph_of[u]].insert((lu.min(lv), lu.max(lv)));
    }

    let node_labels = if node_lab_path.is_file() {
        let text = fs::read_to_string(&node_lab_path).map_err(|e| Error::io(&node_lab_path, e))?;
        let col = parse_column(&node_lab_path, &text)?;
        if col.len() != total_nodes {
            return Err(Error::Format {
                file: node_lab_path,
                message: format!("{} node labels for {total_nodes} nodes", col.len()),
            });
        }
        Some(col.into_iter().map(|(_, v)| v).collect::<Vec<_>>())
    } else {
        None
    };

    let mut label_values: Vec<i64> = raw_labels.iter().map(|&(_, v)| v).collect();
    label_values.sort_unstable();
    label_values.dedup();
    let node_label_values = node_labels.as_ref().map(|labels| {
        let mut v = labels.clone();
        v.sort_unstable();
        v.dedup();
        v
    });

    let feature_dim = node_label_values.as_ref().map_or(1, Vec::len);
    let mut features: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n * feature_dim]).collect();
    for node in 0..total_nodes {
        let (g, li) = (graph_of[node], local[node]);
        let col = match (&node_labels, &node_label_values) {
            (Some(labels), Some(vocab)) => vocab.binary_search(&labels[node]).expect("label in vocab"),
            _ => 0,
        };
        features[g][li * feature_dim + col] = 1.0;
    }

    let graphs = edge_sets
        .into_iter()
        .zip(features)
        .enumerate()
        .map(|(g, (edges, feats))| {
            let y = label_values
                .binary_search(&raw_labels[g].1)
                .expect("label in vocab");
            AttributedGraph::new(sizes[g], edges, feature_dim, feats, Some(y))
        })
        .collect::<Result<Vec<_>>>()?;

    let ds = DomainDataset {
        name: name.to_string(),
        role: DomainRole::Source,
        class_count: label_values.len(),
        graphs,
        label_values,
        node_label_values,
    };
    ds.check_invariants()?;
    Ok(ds)
}

/// Writes `dataset` in TUDataset layout under `root` with file prefix `name`.
/// Edges are emitted in both directions, as the reference collections do.
pub fn write_tudataset(dataset: &DomainDataset, root: impl AsRef<Path>, name: &str) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut a = String::new();
    let mut ind = String::new();
    let mut labels = String::new();
    let mut node_labels = String::new();
    let mut offset = 0usize;
    for (gi, g) in dataset.graphs.iter().enumerate() {
        for &(u, v) in g.edges() {
            a.push_str(&format!("{}, {}\n", offset + u + 1, offset + v + 1));
            a.push_str(&format!("{}, {}\n", offset + v + 1, offset + u + 1));
        }
        for node in 0..g.node_count() {
            ind.push_str(&format!("{}\n", gi + 1));
            if let Some(vocab) = &dataset.node_label_values {
                let f = g.feature_dim();
                let row = &g.features()[node * f..(node + 1) * f];
                let col = row.iter().position(|&x| x != 0.0).unwrap_or(0);
                node_labels.push_str(&format!("{}\n", vocab[col]));
            }
        }
        let y = g
            .label()
            .ok_or_else(|| Error::contract(format!("graph {gi} has no label to write")))?;
        labels.push_str(&format!("{}\n", dataset.label_values[y]));
        offset += g.node_count();
    }
    let mut files = vec![("A", a), ("graph_indicator", ind), ("graph_labels", labels)];
    if dataset.node_label_values.is_some() {
        files.push(("node_labels", node_labels));
    }
    for (suffix, body) in files {
        let path = dataset_file(root, name, suffix);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, suffix: &str, body: &str) {
        fs::write(dataset_file(dir, name, suffix), body).unwrap();
    }

    #[test]
    fn symmetric_duplicate_edges_collapse() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "T", "A", "1, 2\n2, 1\n");
        write(dir.path(), "T", "graph_indicator", "1\n1\n");
        write(dir.path(), "T", "graph_labels", "1\n");
        let ds = parse_tudataset(dir.path(), "T").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.graphs[0].node_count(), 2);
        assert_eq!(ds.graphs[0].edges(), &[(0, 1)]);
        assert_eq!(ds.graphs[0].feature_dim(), 1);
        assert_eq!(ds.graphs[0].features(), &[1.0, 1.0]);
    }

    #[test]
    fn crlf_and_labels_remapped_ascending() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "T", "A", "1, 2\r\n3, 4\r\n");
        write(dir.path(), "T", "graph_indicator", "1\r\n1\r\n2\r\n2\r\n");
        write(dir.path(), "T", "graph_labels", "1\r\n-1\r\n");
        write(dir.path(), "T", "node_labels", "3\r\n0\r\n0\r\n3\r\n");
        let ds = parse_tudataset(dir.path(), "T").unwrap();
        assert_eq!(ds.class_count, 2);
        assert_eq!(ds.graphs[0].label(), Some(1));
        assert_eq!(ds.graphs[1].label(), Some(0));
        assert_eq!(ds.node_label_values, Some(vec![0, 3]));
        assert_eq!(ds.graphs[0].features(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn missing_file_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "T", "A", "1, 2\n");
        write(dir.path(), "T", "graph_indicator", "1\n1\n");
        let err = parse_tudataset(dir.path(), "T").unwrap_err();
        assert!(matches!(&err, Error::Format { file, .. } if file.ends_with("T_graph_labels.txt")));
    }

    #[test]
    fn node_beyond_indicator_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "T", "A", "1, 2\n2, 3\n");
        write(dir.path(), "T", "graph_indicator", "1\n1\n");
        write(dir.path(), "T", "graph_labels", "0\n");
        let err = parse_tudataset(dir.path(), "T").unwrap_err();
        assert!(matches!(err, Error::Index { line: 2, .. }), "{err}");
    }

    #[test]
    fn non_integer_token_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "T", "A", "1, 2\n");
        write(dir.path(), "T", "graph_indicator", "1\nx\n");
        write(dir.path(), "T", "graph_labels", "0\n");
        let err = parse_tudataset(dir.path(), "T").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, ref token, .. } if token == "x"), "{err}");
    }
}
