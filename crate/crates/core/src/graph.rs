//! Graph data model, bundle I/O, connected components, synthetic generators
//! and label splits.
//!
//! Graphs are directed and stored in compressed sparse row form. Undirected
//! datasets carry both directions of every edge.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A node-attributed directed graph with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    name: String,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an edge list. Duplicate edges are dropped and each
    /// adjacency row is sorted by target index.
    pub fn new(
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::RowMismatch {
                what: "labels",
                got: labels.len(),
                expected: n,
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            rows[i].push(j);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(edges.len());
        offsets.push(0);
        for mut row in rows {
            row.sort_unstable();
            row.dedup();
            targets.extend_from_slice(&row);
            offsets.push(targets.len());
        }
        Ok(Self {
            name: String::new(),
            offsets,
            targets,
            features,
            labels,
            num_classes,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of directed edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Out-neighbours of `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.targets[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&j).is_ok()
    }

    /// All directed edges in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |i| self.neighbors(i).iter().map(move |&j| (i, j)))
    }

    /// Number of unordered node pairs joined by at least one directed edge,
    /// ignoring self-loops.
    pub fn num_undirected_edges(&self) -> usize {
        self.edges()
            .filter(|&(i, j)| i != j && (i < j || !self.has_edge(j, i)))
            .count()
    }

    /// True when every edge has its reverse.
    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(i, j)| self.has_edge(j, i))
    }

    /// Weakly connected components as node lists, in order of smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.num_nodes();
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, j) in self.edges() {
            undirected[i].push(j);
            undirected[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &undirected[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.num_nodes() > 0 && self.components().len() == 1
    }

    /// Induced subgraph on `nodes` (old indices, any order). Node `k` of the
    /// result is `nodes[k]` of `self`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let n = self.num_nodes();
        let mut new_index = vec![usize::MAX; n];
        for (k, &old) in nodes.iter().enumerate() {
            if old >= n {
                return Err(Error::IndexOutOfRange { index: old, n });
            }
            new_index[old] = k;
        }
        let mut edges = Vec::new();
        for (k, &old) in nodes.iter().enumerate() {
            for &j in self.neighbors(old) {
                if new_index[j] != usize::MAX {
                    edges.push((k, new_index[j]));
                }
            }
        }
        let features = self.features.select(ndarray::Axis(0), nodes);
        let labels = nodes.iter().map(|&i| self.labels[i]).collect();
        Ok(Graph::new(&edges, features, labels, self.num_classes)?.with_name(self.name.clone()))
    }

    /// Same graph with every edge mirrored.
    pub fn symmetrized(&self) -> Graph {
        let edges: Vec<_> = self.edges().flat_map(|(i, j)| [(i, j), (j, i)]).collect();
        Graph::new(&edges, self.features.clone(), self.labels.clone(), self.num_classes)
            .expect("mirroring a valid graph stays valid")
            .with_name(self.name.clone())
    }
}

/// Contents of `meta.json` in a bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n: usize,
    pub f: usize,
    pub c: usize,
    pub name: String,
}

fn open_required(dir: &Path, file: &str) -> Result<File> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    File::open(&path).map_err(|e| Error::io(path, e))
}

fn csv_reader(file: File) -> csv::Reader<File> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file)
}

fn parse_err(file: &str, line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        msg: msg.to_string(),
    }
}

/// Loads a graph bundle directory (`edges.csv`, `features.csv`,
/// `labels.csv`, optional `meta.json`). Edges are deduplicated but not
/// symmetrized.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<Graph> {
    let dir = dir.as_ref();

    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in csv_reader(open_required(dir, "features.csv")?).records().enumerate() {
        let rec = rec.map_err(|e| parse_err("features.csv", line + 1, e))?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err("features.csv", line + 1, e))?;
        if let Some(first) = feature_rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    "features.csv",
                    line + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        feature_rows.push(row);
    }
    let n = feature_rows.len();
    let f = feature_rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((n, f), feature_rows.into_iter().flatten().collect())
        .map_err(|e| Error::Dimension(e.to_string()))?;

    let mut labels = Vec::with_capacity(n);
    for (line, rec) in csv_reader(open_required(dir, "labels.csv")?).records().enumerate() {
        let rec = rec.map_err(|e| parse_err("labels.csv", line + 1, e))?;
        let field = rec
            .get(0)
            .ok_or_else(|| parse_err("labels.csv", line + 1, "empty line"))?;
        labels.push(
            field
                .parse::<usize>()
                .map_err(|e| parse_err("labels.csv", line + 1, e))?,
        );
    }
    if labels.len() != n {
        return Err(Error::RowMismatch {
            what: "labels.csv",
            got: labels.len(),
            expected: n,
        });
    }

    let mut edges = Vec::new();
    for (line, rec) in csv_reader(open_required(dir, "edges.csv")?).records().enumerate() {
        let rec = rec.map_err(|e| parse_err("edges.csv", line + 1, e))?;
        if rec.len() != 2 {
            return Err(parse_err("edges.csv", line + 1, "expected src,dst"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|e| parse_err("edges.csv", line + 1, e));
        edges.push((parse(&rec[0])?, parse(&rec[1])?));
    }

    let meta_path = dir.join("meta.json");
    let (num_classes, name) = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: BundleMeta = serde_json::from_str(&text)?;
        if meta.n != n {
            return Err(Error::RowMismatch {
                what: "features.csv (meta.json n)",
                got: n,
                expected: meta.n,
            });
        }
        if meta.f != f {
            return Err(Error::Dimension(format!(
                "meta.json declares f = {}, features.csv has {f} columns",
                meta.f
            )));
        }
        (meta.c, meta.name)
    } else {
        let c = labels.iter().max().map_or(0, |&m| m + 1);
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        (c, name)
    };

    Ok(Graph::new(&edges, features, labels, num_classes)?.with_name(name))
}

/// Writes `g` as a bundle directory, creating it if needed.
pub fn save_bundle(g: &Graph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |file: &str, body: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
        let path = dir.join(file);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(f);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
    };
    write("edges.csv", &|w| {
        for (i, j) in g.edges() {
            writeln!(w, "{i},{j}")?;
        }
        Ok(())
    })?;
    write("features.csv", &|w| {
        for row in g.features().rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    })?;
    write("labels.csv", &|w| {
        for l in g.labels() {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    let meta = BundleMeta {
        n: g.num_nodes(),
        f: g.feature_dim(),
        c: g.num_classes(),
        name: g.name().to_string(),
    };
    write("meta.json", &|w| {
        serde_json::to_writer(&mut *w, &meta).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

/// Induced subgraph on the largest weakly connected component, together
/// with the map from new node index to original node index. Ties go to the
/// component containing the smallest node index.
pub fn largest_connected_component(g: &Graph) -> Result<(Graph, Vec<usize>)> {
    if g.num_nodes() == 0 {
        return Err(Error::EmptyGraph);
    }
    let mut best: Vec<usize> = Vec::new();
    for comp in g.components() {
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let sub = g.induced_subgraph(&best)?;
    Ok((sub, best))
}

/// Topologies for [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    Ring,
    Complete,
    ErdosRenyi(f64),
}

/// Deterministic synthetic graph: symmetric edges, standard normal features,
/// labels `i % 2`.
pub fn generate_synthetic(kind: SyntheticKind, n: usize, f: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let mut link = |i: usize, j: usize| {
        edges.push((i, j));
        edges.push((j, i));
    };
    let name = match kind {
        SyntheticKind::Ring => {
            for i in 0..n {
                link(i, (i + 1) % n);
            }
            "ring".to_string()
        }
        SyntheticKind::Complete => {
            for i in 0..n {
                for j in i + 1..n {
                    link(i, j);
                }
            }
            "complete".to_string()
        }
        SyntheticKind::ErdosRenyi(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("edge probability {p} not in [0, 1]")));
            }
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        link(i, j);
                    }
                }
            }
            format!("erdos_renyi({p})")
        }
    };
    let features = Array2::from_shape_simple_fn((n, f), || rng.sample(StandardNormal));
    let labels = (0..n).map(|i| i % 2).collect();
    Ok(Graph::new(&edges, features, labels, 2)?.with_name(name))
}

/// Disjoint train/validation/test masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub per_class: Option<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn train_indices(&self) -> Vec<usize> {
        mask_indices(&self.train_mask)
    }

    pub fn val_indices(&self) -> Vec<usize> {
        mask_indices(&self.val_mask)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        mask_indices(&self.test_mask)
    }

    /// A split that trains on every node; used by toy examples.
    pub fn all_train(n: usize) -> Self {
        Self {
            train_mask: vec![true; n],
            val_mask: vec![true; n],
            test_mask: vec![true; n],
            per_class: None,
            seed: 0,
        }
    }
}

pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
}

/// Samples `per_class` training nodes from every class, then `val`
/// validation nodes from the remainder; everything else is test.
pub fn make_split(g: &Graph, per_class: usize, val: usize, seed: u64) -> Result<SplitSpec> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    let n = g.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes()];
    for (i, &l) in g.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut train_mask = vec![false; n];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass(class));
        }
        members.shuffle(&mut rng);
        for &i in members.iter().take(per_class) {
            train_mask[i] = true;
        }
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !train_mask[i]).collect();
    rest.shuffle(&mut rng);
    let mut val_mask = vec![false; n];
    for &i in rest.iter().take(val) {
        val_mask[i] = true;
    }
    let test_mask = (0..n).map(|i| !train_mask[i] && !val_mask[i]).collect();
    Ok(SplitSpec {
        train_mask,
        val_mask,
        test_mask,
        per_class: Some(per_class),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny(edges: &[(usize, usize)], n: usize) -> Graph {
        Graph::new(edges, Array2::zeros((n, 2)), vec![0; n], 1).unwrap()
    }

    #[test]
    fn dedups_and_sorts_rows() {
        let g = tiny(&[(0, 2), (0, 1), (0, 1), (2, 0)], 3);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.neighbors(0), &[1, 2]);
    }

    #[test]
    fn rejects_out_of_range_edge() {
        let err = Graph::new(&[(0, 5)], Array2::zeros((3, 1)), vec![0; 3], 1).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 5, n: 3 }));
    }

    #[test]
    fn lcc_picks_four_cycle() {
        let mut edges = Vec::new();
        for tri in [[0, 1, 2], [3, 4, 5]] {
            for k in 0..3 {
                edges.push((tri[k], tri[(k + 1) % 3]));
                edges.push((tri[(k + 1) % 3], tri[k]));
            }
        }
        for k in 0..4 {
            let (a, b) = (6 + k, 6 + (k + 1) % 4);
            edges.push((a, b));
            edges.push((b, a));
        }
        let g = tiny(&edges, 10);
        let (lcc, map) = largest_connected_component(&g).unwrap();
        assert_eq!(lcc.num_nodes(), 4);
        assert_eq!(map, vec![6, 7, 8, 9]);
        assert_eq!(lcc.num_edges(), 8);
        assert!(lcc.is_connected());
    }

    #[test]
    fn lcc_identity_on_connected() {
        let g = generate_synthetic(SyntheticKind::Ring, 6, 2, 0).unwrap();
        let (lcc, map) = largest_connected_component(&g).unwrap();
        assert_eq!(map, (0..6).collect::<Vec<_>>());
        assert_eq!(lcc, g);
    }

    #[test]
    fn lcc_empty_graph_errors() {
        let g = Graph::new(&[], Array2::zeros((0, 1)), vec![], 1).unwrap();
        assert!(matches!(largest_connected_component(&g), Err(Error::EmptyGraph)));
    }

    #[test]
    fn synthetic_edge_counts() {
        assert_eq!(
            generate_synthetic(SyntheticKind::Complete, 4, 1, 0)
                .unwrap()
                .num_edges(),
            12
        );
        assert_eq!(
            generate_synthetic(SyntheticKind::Ring, 5, 1, 0).unwrap().num_edges(),
            10
        );
        let a = generate_synthetic(SyntheticKind::ErdosRenyi(0.5), 20, 3, 7).unwrap();
        let b = generate_synthetic(SyntheticKind::ErdosRenyi(0.5), 20, 3, 7).unwrap();
        assert_eq!(a, b);
        assert!(generate_synthetic(SyntheticKind::ErdosRenyi(1.5), 20, 3, 7).is_err());
        assert!(generate_synthetic(SyntheticKind::Ring, 1, 3, 7).is_err());
    }

    #[test]
    fn split_counts() {
        let g = generate_synthetic(SyntheticKind::Ring, 100, 1, 0).unwrap();
        let s = make_split(&g, 20, 30, 3).unwrap();
        assert_eq!(s.train_indices().len(), 40);
        assert_eq!(s.val_indices().len(), 30);
        assert_eq!(s.test_indices().len(), 30);
        assert_eq!(s, make_split(&g, 20, 30, 3).unwrap());
        assert!(make_split(&g, 0, 30, 3).is_err());
    }

    #[test]
    fn split_one_per_class_on_seven_classes() {
        let n = 35;
        let labels: Vec<usize> = (0..n).map(|i| i % 7).collect();
        let g = Graph::new(&[], Array2::zeros((n, 1)), labels, 7).unwrap();
        let s = make_split(&g, 1, 5, 0).unwrap();
        assert_eq!(s.train_indices().len(), 7);
    }

    #[test]
    fn split_empty_class_errors() {
        let g = Graph::new(&[], array![[0.0], [1.0]], vec![0, 0], 2).unwrap();
        assert!(matches!(make_split(&g, 1, 0, 0), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn bundle_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::MissingFile(_))));
    }

    #[test]
    fn bundle_dedups_and_checks_rows() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("edges.csv"), "0,1\n1,0\n0,1\n").unwrap();
        fs::write(dir.path().join("features.csv"), "1,2\n3,4\n5,6\n").unwrap();
        fs::write(dir.path().join("labels.csv"), "0\n1\n0\n").unwrap();
        let g = load_bundle(dir.path()).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);

        fs::write(dir.path().join("labels.csv"), "0\n1\n").unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::RowMismatch { .. })));

        fs::write(dir.path().join("labels.csv"), "0\n1\n0\n").unwrap();
        fs::write(dir.path().join("edges.csv"), "0,3\n").unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::IndexOutOfRange { .. })));
    }
}
