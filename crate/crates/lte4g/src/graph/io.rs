//! Reading and writing the on-disk dataset layout.
//!
//! A dataset directory holds four files:
//!
//! * `meta.json`: `{"n": ..., "num_features": ..., "num_classes": ...}`
//! * `edges.tsv`: one `src<TAB>dst` pair per line
//! * `features.tsv`: `node_id<TAB>...` where the tail is either a dense
//!   comma-separated value list or sparse `index:value` pairs
//! * `labels.tsv`: one `node_id<TAB>class_id` per line
//!
//! Writers emit a canonical form (sorted edges with `src < dst`, nodes in
//! ascending order, sparse feature rows when under quarter density) that
//! reading reproduces exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::num::DenseMat;

/// Edge bookkeeping from a load: the raw directed line count and the number
/// of undirected edges left after symmetrization and deduplication.
#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub edge_lines: usize,
    pub undirected_edges: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    n: usize,
    num_features: usize,
    num_classes: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads a dataset directory laid out as described in the module docs.
pub fn load_dataset(dir: &Path) -> Result<(Graph, LoadReport)> {
    load_graph(
        &dir.join("edges.tsv"),
        &dir.join("features.tsv"),
        &dir.join("labels.tsv"),
        &dir.join("meta.json"),
    )
}

/// Loads a graph from explicit file paths.
pub fn load_graph(
    edges_path: &Path,
    features_path: &Path,
    labels_path: &Path,
    meta_path: &Path,
) -> Result<(Graph, LoadReport)> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
    if meta.n == 0 {
        return Err(Error::Validation("meta.json declares zero nodes".into()));
    }

    let features = read_features(features_path, meta.n, meta.num_features)?;
    let labels = read_labels(labels_path, meta.n, meta.num_classes)?;
    let (raw_edges, edge_lines) = read_edges(edges_path, meta.n)?;

    let graph = Graph::new(meta.num_classes, features, labels, &raw_edges)?;
    let report = LoadReport {
        edge_lines,
        undirected_edges: graph.num_edges(),
    };
    Ok((graph, report))
}

fn read_edges(path: &Path, n: usize) -> Result<(Vec<(usize, usize)>, usize)> {
    let text = fs::read_to_string(path)?;
    let mut edges = Vec::new();
    let mut lines = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        let mut parts = line.split('\t');
        let src = parse_node(parts.next(), path, i + 1, n)?;
        let dst = parse_node(parts.next(), path, i + 1, n)?;
        if parts.next().is_some() {
            return Err(parse_err(path, i + 1, "expected exactly two columns"));
        }
        edges.push((src, dst));
    }
    Ok((edges, lines))
}

fn parse_node(tok: Option<&str>, path: &Path, line: usize, n: usize) -> Result<usize> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "missing column"))?;
    let id: usize = tok
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("bad node id {tok:?}")))?;
    if id >= n {
        return Err(parse_err(path, line, format!("node id {id} outside 0..{n}")));
    }
    Ok(id)
}

fn read_labels(path: &Path, n: usize, num_classes: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = vec![usize::MAX; n];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let v = parse_node(parts.next(), path, i + 1, n)?;
        let y_tok = parts
            .next()
            .ok_or_else(|| parse_err(path, i + 1, "missing class column"))?;
        let y: usize = y_tok
            .trim()
            .parse()
            .map_err(|_| parse_err(path, i + 1, format!("bad class id {y_tok:?}")))?;
        if y >= num_classes {
            return Err(parse_err(
                path,
                i + 1,
                format!("class {y} outside 0..{num_classes}"),
            ));
        }
        if labels[v] != usize::MAX {
            return Err(parse_err(path, i + 1, format!("node {v} labeled twice")));
        }
        labels[v] = y;
    }
    if let Some(v) = labels.iter().position(|&y| y == usize::MAX) {
        return Err(Error::Validation(format!("node {v} has no label")));
    }
    Ok(labels)
}

fn read_features(path: &Path, n: usize, num_features: usize) -> Result<DenseMat> {
    let text = fs::read_to_string(path)?;
    let mut features = DenseMat::zeros(n, num_features);
    let mut seen = vec![false; n];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id_tok, rest) = match line.split_once('\t') {
            Some(pair) => pair,
            None => (line, ""),
        };
        let v = parse_node(Some(id_tok), path, i + 1, n)?;
        if seen[v] {
            return Err(parse_err(path, i + 1, format!("node {v} appears twice")));
        }
        seen[v] = true;
        let rest = rest.trim();
        if rest.is_empty() {
            continue;
        }
        let sparse = rest.contains(':');
        let row = features.row_mut(v);
        if sparse {
            for tok in rest.split(',') {
                let (idx_tok, val_tok) = tok
                    .split_once(':')
                    .ok_or_else(|| parse_err(path, i + 1, format!("bad pair {tok:?}")))?;
                let idx: usize = idx_tok.trim().parse().map_err(|_| {
                    parse_err(path, i + 1, format!("bad feature index {idx_tok:?}"))
                })?;
                if idx >= num_features {
                    return Err(parse_err(
                        path,
                        i + 1,
                        format!("feature index {idx} outside 0..{num_features}"),
                    ));
                }
                let val: f64 = val_tok.trim().parse().map_err(|_| {
                    parse_err(path, i + 1, format!("bad feature value {val_tok:?}"))
                })?;
                row[idx] = val;
            }
        } else {
            let vals: Vec<&str> = rest.split(',').collect();
            if vals.len() != num_features {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("{} dense values, expected {num_features}", vals.len()),
                ));
            }
            for (slot, tok) in row.iter_mut().zip(vals) {
                *slot = tok.trim().parse().map_err(|_| {
                    parse_err(path, i + 1, format!("bad feature value {tok:?}"))
                })?;
            }
        }
    }
    if let Some(v) = seen.iter().position(|&s| !s) {
        return Err(Error::Validation(format!("node {v} has no feature row")));
    }
    Ok(features)
}

/// Writes a dataset directory in canonical form.
pub fn save_dataset(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        n: g.n(),
        num_features: g.num_features(),
        num_classes: g.num_classes(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;

    let mut edges = BufWriter::new(fs::File::create(dir.join("edges.tsv"))?);
    for &(a, b) in g.edges() {
        writeln!(edges, "{a}\t{b}")?;
    }
    edges.flush()?;

    let mut labels = BufWriter::new(fs::File::create(dir.join("labels.tsv"))?);
    for (v, &y) in g.labels().iter().enumerate() {
        writeln!(labels, "{v}\t{y}")?;
    }
    labels.flush()?;

    let mut features = BufWriter::new(fs::File::create(dir.join("features.tsv"))?);
    for v in 0..g.n() {
        let row = g.features().row(v);
        let nnz = row.iter().filter(|&&x| x != 0.0).count();
        write!(features, "{v}\t")?;
        if 4 * nnz < row.len() {
            // Sparse row form; an all-zero row writes just the id.
            let mut first = true;
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    if !first {
                        write!(features, ",")?;
                    }
                    write!(features, "{j}:{x}")?;
                    first = false;
                }
            }
        } else {
            for (j, &x) in row.iter().enumerate() {
                if j > 0 {
                    write!(features, ",")?;
                }
                write!(features, "{x}")?;
            }
        }
        writeln!(features)?;
    }
    features.flush()?;
    Ok(())
}

/// Bookkeeping from a citation-network conversion.
#[derive(Debug, Clone, Serialize)]
pub struct ConvertReport {
    pub nodes: usize,
    pub num_features: usize,
    /// Class names in index order.
    pub classes: Vec<String>,
    pub edge_lines: usize,
    /// Edge lines dropped because an endpoint has no content row.
    pub dangling_edges: usize,
    pub undirected_edges: usize,
}

/// Converts a citation-network pair of files into a [`Graph`].
///
/// The content file holds one `id<TAB>feature...<TAB>class_name` row per
/// node; the cites file one `cited<TAB>citing` pair per line. Node ids
/// are strings and are numbered in order of appearance in the content
/// file; class names map to indices in ascending name order. Edges whose
/// endpoint has no content row are dropped and counted.
pub fn load_citation_pair(content_path: &Path, cites_path: &Path) -> Result<(Graph, ConvertReport)> {
    let content = fs::read_to_string(content_path)?;
    let mut ids: Vec<String> = Vec::new();
    let mut index_of = std::collections::HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut num_features = None;

    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 {
            return Err(parse_err(
                content_path,
                i + 1,
                "expected id, features, and class columns",
            ));
        }
        let id = cols[0].trim().to_string();
        if index_of.contains_key(&id) {
            return Err(parse_err(
                content_path,
                i + 1,
                format!("node {id:?} appears twice"),
            ));
        }
        let feats: Vec<f64> = cols[1..cols.len() - 1]
            .iter()
            .enumerate()
            .map(|(j, tok)| {
                tok.trim().parse::<f64>().map_err(|_| {
                    parse_err(
                        content_path,
                        i + 1,
                        format!("bad feature value {tok:?} in column {}", j + 2),
                    )
                })
            })
            .collect::<Result<_>>()?;
        match num_features {
            None => num_features = Some(feats.len()),
            Some(f) if f != feats.len() => {
                return Err(parse_err(
                    content_path,
                    i + 1,
                    format!("{} features, earlier rows had {f}", feats.len()),
                ));
            }
            Some(_) => {}
        }
        index_of.insert(id.clone(), ids.len());
        ids.push(id);
        rows.push(feats);
        let class = cols[cols.len() - 1].trim().to_string();
        if !class_names.contains(&class) {
            class_names.push(class);
        }
    }
    if ids.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no content rows",
            content_path.display()
        )));
    }
    let num_features = num_features.expect("non-empty");
    class_names.sort();

    let content_classes = class_names.clone();
    let class_index = |name: &str| {
        content_classes
            .iter()
            .position(|c| c == name)
            .expect("collected above")
    };
    let labels: Vec<usize> = content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let class = line.rsplit('\t').next().expect("validated above").trim();
            class_index(class)
        })
        .collect();

    let cites = fs::read_to_string(cites_path)?;
    let mut edges = Vec::new();
    let mut edge_lines = 0usize;
    let mut dangling = 0usize;
    for (i, line) in cites.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        edge_lines += 1;
        let mut parts = line.split('\t');
        let a = parts
            .next()
            .ok_or_else(|| parse_err(cites_path, i + 1, "missing column"))?
            .trim();
        let b = parts
            .next()
            .ok_or_else(|| parse_err(cites_path, i + 1, "missing column"))?
            .trim();
        match (index_of.get(a), index_of.get(b)) {
            (Some(&u), Some(&v)) => edges.push((u, v)),
            _ => dangling += 1,
        }
    }

    let n = ids.len();
    let mut flat = Vec::with_capacity(n * num_features);
    for row in rows {
        flat.extend(row);
    }
    let graph = Graph::new(
        class_names.len(),
        DenseMat::from_flat(n, num_features, flat)?,
        labels,
        &edges,
    )?;
    let report = ConvertReport {
        nodes: n,
        num_features,
        classes: class_names,
        edge_lines,
        dangling_edges: dangling,
        undirected_edges: graph.num_edges(),
    };
    Ok((graph, report))
}
