//! Dataset manifests, node/edge TSV files, and the shared `key = value`
//! text dialect (also used for configs).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{DomainDataset, Graph};
use crate::tensor::Matrix;

pub const NODES_HEADER: &str = "node_id\tlabel\tfeatures";

/// One `key = value` entry with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// duplicate keys are rejected.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(format!("expected `key = value`, got `{line}`")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(perr("empty key".into()));
        }
        if out.iter().any(|e| e.key == key) {
            return Err(perr(format!("duplicate key `{key}`")));
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: i + 1,
        });
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Loads one domain from a manifest. Relative paths inside the manifest are
/// resolved against the manifest's directory.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<DomainDataset> {
    let manifest_path = manifest_path.as_ref();
    let entries = parse_key_values(&read(manifest_path)?, manifest_path)?;
    let get = |k: &str| entries.iter().find(|e| e.key == k);
    let require = |k: &str| {
        get(k).map(|e| e.value.clone()).ok_or_else(|| Error::Parse {
            path: manifest_path.to_path_buf(),
            line: 0,
            message: format!("missing required key `{k}`"),
        })
    };
    for e in &entries {
        if !matches!(e.key.as_str(), "domain_id" | "nodes" | "edges" | "directed" | "feature_dim") {
            return Err(Error::Parse {
                path: manifest_path.to_path_buf(),
                line: e.line,
                message: format!("unknown key `{}`", e.key),
            });
        }
    }
    if let Some(e) = get("directed") {
        if e.value != "false" {
            return Err(Error::Parse {
                path: manifest_path.to_path_buf(),
                line: e.line,
                message: "only `directed = false` is supported".into(),
            });
        }
    }
    let declared_dim = match get("feature_dim") {
        Some(e) => Some(e.value.parse::<usize>().ok().filter(|&d| d > 0).ok_or_else(|| {
            Error::Parse {
                path: manifest_path.to_path_buf(),
                line: e.line,
                message: format!("invalid feature_dim `{}`", e.value),
            }
        })?),
        None => None,
    };

    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let nodes_path = base.join(require("nodes")?);
    let edges_path = base.join(require("edges")?);

    let nodes = parse_nodes(&read(&nodes_path)?, &nodes_path, declared_dim)?;
    let edges = parse_edges(&read(&edges_path)?, &edges_path, &nodes.index)?;

    let graph = Graph::new(nodes.labels.len(), edges, nodes.features, nodes.labels)?;
    DomainDataset::new(require("domain_id")?, vec![graph], nodes.classes)
}

struct ParsedNodes {
    index: HashMap<String, usize>,
    features: Matrix,
    labels: Vec<Option<usize>>,
    classes: Vec<String>,
}

fn parse_nodes(text: &str, path: &Path, declared_dim: Option<usize>) -> Result<ParsedNodes> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim_end() == NODES_HEADER => {}
        Some((i, h)) => return Err(perr(i + 1, format!("expected header `{NODES_HEADER}`, got `{h}`"))),
        None => return Err(perr(1, "empty nodes file".into())),
    }

    let mut dim = declared_dim;
    let mut index = HashMap::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for (i, raw) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = raw.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() != 3 {
            return Err(perr(line_no, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let id = fields[0].trim();
        if index.insert(id.to_string(), labels.len()).is_some() {
            return Err(perr(line_no, format!("duplicate node id `{id}`")));
        }
        let label = match fields[1].trim() {
            "-" => None,
            name => Some(match classes.iter().position(|c| c == name) {
                Some(p) => p,
                None => {
                    classes.push(name.to_string());
                    classes.len() - 1
                }
            }),
        };
        labels.push(label);
        let row: Vec<f64> = fields[2]
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| perr(line_no, format!("invalid feature value `{}`", s.trim())))
            })
            .collect::<Result<_>>()?;
        let expected = *dim.get_or_insert(row.len());
        if row.len() != expected {
            return Err(perr(
                line_no,
                format!("{} features, expected {expected}", row.len()),
            ));
        }
        values.extend(row);
    }
    let n = labels.len();
    let d = dim.unwrap_or(0);
    if n == 0 {
        return Err(perr(1, "no nodes".into()));
    }
    let features = Matrix::from_shape_vec((n, d), values).expect("row lengths checked");
    Ok(ParsedNodes {
        index,
        features,
        labels,
        classes,
    })
}

fn parse_edges(text: &str, path: &Path, index: &HashMap<String, usize>) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(perr(format!("expected `src<TAB>dst`, got `{line}`")));
        }
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| perr(format!("edge endpoint `{id}` is not a known node")))
        };
        edges.push((lookup(fields[0])?, lookup(fields[1])?));
    }
    Ok(edges)
}

/// Writes `<id>.manifest`, `<id>.nodes.tsv` and `<id>.edges.tsv` into `dir`
/// and returns the manifest path. Node ids are the node indices.
pub fn write_dataset(ds: &DomainDataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let [g] = ds.graphs() else {
        return Err(Error::InvalidArgument(format!(
            "domain {} has {} graphs; the file format holds one",
            ds.domain_id,
            ds.graphs().len()
        )));
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = &ds.domain_id;
    let nodes_name = format!("{id}.nodes.tsv");
    let edges_name = format!("{id}.edges.tsv");

    let mut nodes = String::from(NODES_HEADER);
    nodes.push('\n');
    for v in 0..g.node_count() {
        let label = g.label(v).map_or("-", |c| ds.classes[c].as_str());
        let _ = write!(nodes, "{v}\t{label}\t");
        for (j, x) in g.features().row(v).iter().enumerate() {
            if j > 0 {
                nodes.push(',');
            }
            let _ = write!(nodes, "{x}");
        }
        nodes.push('\n');
    }
    let mut edges = String::from("# src\tdst\n");
    for &(a, b) in g.edges() {
        let _ = writeln!(edges, "{a}\t{b}");
    }
    let manifest = format!(
        "domain_id = {id}\nnodes = {nodes_name}\nedges = {edges_name}\ndirected = false\nfeature_dim = {}\n",
        ds.feature_dim()
    );

    write(&dir.join(&nodes_name), &nodes)?;
    write(&dir.join(&edges_name), &edges)?;
    let manifest_path = dir.join(format!("{id}.manifest"));
    write(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, nodes: &str, edges: &str, extra: &str) -> PathBuf {
        fs::write(dir.join("n.tsv"), nodes).unwrap();
        fs::write(dir.join("e.tsv"), edges).unwrap();
        let m = dir.join("d.manifest");
        fs::write(&m, format!("domain_id = toy\nnodes = n.tsv\nedges = e.tsv\n{extra}")).unwrap();
        m
    }

    const NODES: &str = "node_id\tlabel\tfeatures\na\tx\t1,0,0,0\nb\ty\t0,1,0,0\nc\t-\t0,0,1,0.5\n";

    #[test]
    fn loads_simple_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), NODES, "a\tb\n", "");
        let ds = load_dataset(&m).unwrap();
        assert_eq!(ds.domain_id, "toy");
        assert_eq!(ds.feature_dim(), 4);
        let g = &ds.graphs()[0];
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.labels(), &[Some(0), Some(1), None]);
        assert_eq!(ds.classes, vec!["x", "y"]);
    }

    #[test]
    fn symmetric_edges_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), NODES, "# comment\na b\nb a\n", "");
        assert_eq!(load_dataset(&m).unwrap().graphs()[0].edges(), &[(0, 1)]);
    }

    #[test]
    fn short_feature_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let nodes = "node_id\tlabel\tfeatures\na\tx\t1,0,0\n";
        let m = fixture(dir.path(), nodes, "", "feature_dim = 4\n");
        match load_dataset(&m) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("expected 4"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_paths() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path().join("nope")), Err(Error::Io { .. })));
        let m = fixture(dir.path(), NODES, "a\tzz\n", "");
        assert!(matches!(load_dataset(&m), Err(Error::Parse { line: 1, .. })));
        let m = fixture(dir.path(), NODES, "", "directed = true\n");
        assert!(load_dataset(&m).is_err());
        let m = fixture(dir.path(), "node_id\tlabel\tfeatures\na\tx\t1,nan\n", "", "");
        assert!(load_dataset(&m).is_err());
    }

    #[test]
    fn key_values_reject_duplicates() {
        let p = Path::new("cfg");
        assert!(parse_key_values("a = 1\na = 2\n", p).is_err());
        assert!(parse_key_values("novalue\n", p).is_err());
        let e = parse_key_values("# c\n\n a = b = c \n", p).unwrap();
        assert_eq!(e[0].value, "b = c");
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = fixture(dir.path(), NODES, "a\tb\nb\tc\n", "");
        let ds = load_dataset(&m).unwrap();
        let out = write_dataset(&ds, dir.path().join("out")).unwrap();
        assert_eq!(load_dataset(out).unwrap(), ds);
    }
}
