//! TUDataset plain-text collections.
//!
//! A collection `<name>` is a set of files sharing a prefix:
//! `_A.txt` (1-indexed global edge pairs), `_graph_indicator.txt` (graph id
//! per node), `_graph_labels.txt` (label per graph) and the optional
//! `_node_labels.txt` / `_node_attributes.txt`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, FeatureLayout, Graph};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct TextFile {
    name: String,
    lines: Vec<String>,
}

fn file_name(name: &str, suffix: &str) -> String {
    format!("{name}_{suffix}.txt")
}

fn read_file(root: &Path, name: &str, suffix: &str, required: bool) -> Result<Option<TextFile>> {
    let fname = file_name(name, suffix);
    let path = root.join(&fname);
    if !required && !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    Ok(Some(TextFile { name: fname, lines }))
}

impl TextFile {
    fn int(&self, line: usize) -> Result<i64> {
        let s = &self.lines[line];
        s.parse::<i64>()
            .map_err(|_| Error::format(&self.name, format!("line {}: expected an integer, got `{s}`", line + 1)))
    }

    fn fields(&self, line: usize) -> impl Iterator<Item = &str> {
        self.lines[line].split(',').map(str::trim)
    }

    /// A comma-separated integer tuple; most collections use one column.
    fn int_tuple(&self, line: usize) -> Result<Vec<i64>> {
        self.fields(line)
            .map(|s| {
                s.parse::<i64>()
                    .map_err(|_| Error::format(&self.name, format!("line {}: expected integers, got `{s}`", line + 1)))
            })
            .collect()
    }
}

/// Parses a full collection.
pub fn parse_tudataset(root: &Path, name: &str) -> Result<Dataset> {
    parse_tudataset_slice(root, name, None)
}

/// Parses a collection, keeping only graphs with id `<= limit` when a limit
/// is given. Node-label encodings and class indices are computed over the
/// kept graphs.
pub fn parse_tudataset_slice(root: &Path, name: &str, limit: Option<usize>) -> Result<Dataset> {
    let adj = read_file(root, name, "A", true)?.expect("required");
    let ind = read_file(root, name, "graph_indicator", true)?.expect("required");
    let glab = read_file(root, name, "graph_labels", true)?.expect("required");
    let nlab = read_file(root, name, "node_labels", false)?;
    let nattr = read_file(root, name, "node_attributes", false)?;

    let total_graphs = glab.lines.len();
    if total_graphs == 0 {
        return Err(Error::format(&glab.name, "no graph labels"));
    }
    let keep = limit.unwrap_or(total_graphs).min(total_graphs);

    // Node -> (graph, local index).
    let n_nodes = ind.lines.len();
    let mut node_graph = Vec::with_capacity(n_nodes);
    let mut node_local = Vec::with_capacity(n_nodes);
    let mut sizes = vec![0usize; total_graphs];
    for i in 0..n_nodes {
        let g = ind.int(i)?;
        if g < 1 {
            return Err(Error::format(&ind.name, format!("node {} assigned to no graph (id {g})", i + 1)));
        }
        let g = (g - 1) as usize;
        if g >= total_graphs {
            return Err(Error::format(
                &ind.name,
                format!("node {} assigned to graph {} but only {total_graphs} graphs are labeled", i + 1, g + 1),
            ));
        }
        node_graph.push(g);
        node_local.push(sizes[g]);
        sizes[g] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::format(&ind.name, format!("graph {} has no nodes", g + 1)));
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); keep];
    for line in 0..adj.lines.len() {
        let parts: Vec<&str> = adj.fields(line).collect();
        if parts.len() != 2 {
            return Err(Error::format(&adj.name, format!("line {}: expected `i, j`", line + 1)));
        }
        let mut ends = [0usize; 2];
        for (k, p) in parts.iter().enumerate() {
            let v: i64 = p
                .parse()
                .map_err(|_| Error::format(&adj.name, format!("line {}: bad node index `{p}`", line + 1)))?;
            if v < 1 || v as usize > n_nodes {
                return Err(Error::format(
                    &adj.name,
                    format!("line {}: dangling node index {v} (have {n_nodes} nodes)", line + 1),
                ));
            }
            ends[k] = v as usize - 1;
        }
        let (ga, gb) = (node_graph[ends[0]], node_graph[ends[1]]);
        if ga != gb {
            return Err(Error::format(
                &adj.name,
                format!("line {}: edge joins graphs {} and {}", line + 1, ga + 1, gb + 1),
            ));
        }
        if ga < keep {
            edges[ga].push((node_local[ends[0]], node_local[ends[1]]));
        }
    }

    let kept_nodes: Vec<usize> = (0..n_nodes).filter(|&i| node_graph[i] < keep).collect();

    let mut layout = FeatureLayout::default();
    let mut label_col: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut node_label: Vec<Vec<i64>> = vec![Vec::new(); n_nodes];
    if let Some(f) = &nlab {
        if f.lines.len() != n_nodes {
            return Err(Error::format(
                &f.name,
                format!("{} lines for {n_nodes} nodes", f.lines.len()),
            ));
        }
        for &i in &kept_nodes {
            node_label[i] = f.int_tuple(i)?;
            if node_label[i].len() != node_label[kept_nodes[0]].len() {
                return Err(Error::format(&f.name, format!("line {}: label width changes", i + 1)));
            }
        }
        let mut values: Vec<Vec<i64>> = kept_nodes.iter().map(|&i| node_label[i].clone()).collect();
        values.sort_unstable();
        values.dedup();
        label_col = values.iter().enumerate().map(|(c, v)| (v.clone(), c)).collect();
        layout.node_label_values = values;
    }
    let mut attrs: Vec<Vec<f64>> = Vec::new();
    if let Some(f) = &nattr {
        if f.lines.len() != n_nodes {
            return Err(Error::format(
                &f.name,
                format!("{} lines for {n_nodes} nodes", f.lines.len()),
            ));
        }
        attrs = vec![Vec::new(); n_nodes];
        for &i in &kept_nodes {
            let row: Vec<f64> = f
                .fields(i)
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::format(&f.name, format!("line {}: bad real `{s}`", i + 1)))
                })
                .collect::<Result<_>>()?;
            if layout.attribute_dim == 0 {
                layout.attribute_dim = row.len();
            } else if row.len() != layout.attribute_dim {
                return Err(Error::format(
                    &f.name,
                    format!("line {}: {} attributes, expected {}", i + 1, row.len(), layout.attribute_dim),
                ));
            }
            attrs[i] = row;
        }
    }
    let n_onehot = layout.node_label_values.len();
    let feature_dim = (n_onehot + layout.attribute_dim).max(1);

    let mut feats: Vec<Vec<f64>> = (0..keep).map(|g| Vec::with_capacity(sizes[g] * feature_dim)).collect();
    for &i in &kept_nodes {
        let dst = &mut feats[node_graph[i]];
        let start = dst.len();
        dst.resize(start + feature_dim, 0.0);
        if n_onehot + layout.attribute_dim == 0 {
            dst[start] = 1.0;
            continue;
        }
        if nlab.is_some() {
            dst[start + label_col[&node_label[i]]] = 1.0;
        }
        if nattr.is_some() {
            dst[start + n_onehot..start + feature_dim].copy_from_slice(&attrs[i]);
        }
    }

    let mut label_values: Vec<i64> = Vec::new();
    let mut graphs = Vec::with_capacity(keep);
    for (g, (f, e)) in feats.into_iter().zip(edges).enumerate() {
        let raw = glab.int(g)?;
        let label = match label_values.iter().position(|&v| v == raw) {
            Some(l) => l,
            None => {
                label_values.push(raw);
                label_values.len() - 1
            }
        };
        let features = Tensor::matrix(sizes[g], feature_dim, f);
        graphs.push(Graph::new(sizes[g], e, features, label)?);
    }

    let ds = Dataset {
        name: name.to_string(),
        num_classes: label_values.len(),
        graphs,
        feature_dim,
        label_values,
        layout,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `ds` as a TUDataset collection named `ds.name` under `dir`.
/// Edges are written in both directions, sorted per graph. Writing a
/// re-parsed dataset reproduces the same bytes.
pub fn write_tudataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_onehot = ds.layout.node_label_values.len();
    if n_onehot + ds.layout.attribute_dim != ds.feature_dim
        && !(n_onehot + ds.layout.attribute_dim == 0 && ds.feature_dim == 1)
    {
        return Err(Error::contract("feature layout does not match feature width"));
    }
    let (mut a, mut ind, mut gl, mut nl, mut na) = (String::new(), String::new(), String::new(), String::new(), String::new());
    let mut offset = 0usize;
    for (gi, g) in ds.graphs.iter().enumerate() {
        let mut directed: Vec<(usize, usize)> = g.edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
        directed.sort_unstable();
        for (u, v) in directed {
            writeln!(a, "{}, {}", u + offset + 1, v + offset + 1).expect("string write");
        }
        for node in 0..g.num_nodes {
            writeln!(ind, "{}", gi + 1).expect("string write");
            let row = g.features.row(node);
            if n_onehot > 0 {
                let hot: Vec<usize> = (0..n_onehot).filter(|&c| row[c] != 0.0).collect();
                if hot.len() != 1 || row[hot[0]] != 1.0 {
                    return Err(Error::contract(format!("graph {gi} node {node}: node-label block is not one-hot")));
                }
                let cells: Vec<String> = ds.layout.node_label_values[hot[0]].iter().map(i64::to_string).collect();
                writeln!(nl, "{}", cells.join(", ")).expect("string write");
            }
            if ds.layout.attribute_dim > 0 {
                let cells: Vec<String> = row[n_onehot..].iter().map(|v| format!("{v:?}")).collect();
                writeln!(na, "{}", cells.join(", ")).expect("string write");
            }
        }
        writeln!(gl, "{}", ds.label_values[g.label]).expect("string write");
        offset += g.num_nodes;
    }
    let put = |suffix: &str, body: &str| -> Result<()> {
        let path = dir.join(file_name(&ds.name, suffix));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    put("A", &a)?;
    put("graph_indicator", &ind)?;
    put("graph_labels", &gl)?;
    if n_onehot > 0 {
        put("node_labels", &nl)?;
    }
    if ds.layout.attribute_dim > 0 {
        put("node_attributes", &na)?;
    }
    Ok(())
}
