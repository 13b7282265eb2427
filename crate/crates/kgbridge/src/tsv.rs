//! Tab-separated node, triple, split and import files.
//!
//! ```text
//! #nodes v1
//! #modalities<TAB>protein<TAB>drug        (optional)
//! P1<TAB>protein<TAB>MKTAYIAK...
//! ```
//! Triples use `#triples v1`, an optional `#relations` line and
//! `head<TAB>relation<TAB>tail` rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use kgbridge_core::encoder::ImportTable;
use kgbridge_core::graph::{KnowledgeGraph, Node, Triple};
use kgbridge_core::split::{SplitRatios, SplitWarning, StratumSplit, TripleSplit};
use serde::{Deserialize, Serialize};

use crate::error::{read_json, read_text, write_file, write_json, Error, Result};

pub const NODES_HEADER: &str = "#nodes v1";
pub const TRIPLES_HEADER: &str = "#triples v1";
pub const EMBEDDINGS_HEADER: &str = "#embeddings v1";

#[derive(Debug, Clone, PartialEq)]
pub struct NodesFile {
    pub nodes: Vec<Node>,
    pub modalities: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriplesFile {
    pub triples: Vec<Triple>,
    pub relations: Option<Vec<String>>,
}

struct Lines<'a> {
    path: &'a Path,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str, header: &str) -> Result<Self> {
        let mut lines = Lines {
            path,
            iter: text.lines().enumerate(),
        };
        match lines.next_line() {
            Some((_, first)) if first == header => Ok(lines),
            Some((n, first)) => Err(lines.err(n, format!("expected header `{header}`, found `{first}`"))),
            None => Err(lines.err(1, format!("missing header `{header}`"))),
        }
    }

    /// Next non-blank line with its 1-based number; `\r` is stripped.
    fn next_line(&mut self) -> Option<(usize, &'a str)> {
        for (i, line) in self.iter.by_ref() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if !line.trim().is_empty() {
                return Some((i + 1, line));
            }
        }
        None
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: message.into(),
        }
    }
}

fn vocab_line(lines: &Lines, n: usize, rest: &str) -> Result<Vec<String>> {
    let labels: Vec<String> = rest.split('\t').filter(|s| !s.is_empty()).map(String::from).collect();
    if labels.is_empty() {
        return Err(lines.err(n, "empty vocabulary line"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for l in &labels {
        if !seen.insert(l) {
            return Err(lines.err(n, format!("duplicate vocabulary entry `{l}`")));
        }
    }
    Ok(labels)
}

fn fields<'a>(lines: &Lines, n: usize, line: &'a str) -> Result<[&'a str; 3]> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != 3 {
        return Err(lines.err(n, format!("expected 3 tab-separated fields, found {}", parts.len())));
    }
    if let Some(i) = parts.iter().position(|p| p.is_empty()) {
        return Err(lines.err(n, format!("field {} is empty", i + 1)));
    }
    Ok([parts[0], parts[1], parts[2]])
}

pub fn parse_nodes(path: &Path, text: &str) -> Result<NodesFile> {
    let mut lines = Lines::new(path, text, NODES_HEADER)?;
    let mut modalities: Option<Vec<String>> = None;
    let mut nodes = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    while let Some((n, line)) = lines.next_line() {
        if let Some(rest) = line.strip_prefix("#modalities") {
            if modalities.is_some() || !nodes.is_empty() {
                return Err(lines.err(n, "`#modalities` must come once, before any node row"));
            }
            modalities = Some(vocab_line(&lines, n, rest)?);
            continue;
        }
        if line.starts_with('#') {
            return Err(lines.err(n, format!("unknown directive `{line}`")));
        }
        let [id, modality, feature] = fields(&lines, n, line)?;
        if let Some(first) = seen.insert(id.to_string(), n) {
            return Err(lines.err(n, format!("duplicate node id `{id}` (first on line {first})")));
        }
        if let Some(v) = &modalities {
            if !v.iter().any(|m| m == modality) {
                return Err(lines.err(n, format!("unknown modality `{modality}`")));
            }
        }
        nodes.push(Node::new(id, modality, feature));
    }
    Ok(NodesFile { nodes, modalities })
}

pub fn parse_triples(path: &Path, text: &str) -> Result<TriplesFile> {
    let mut lines = Lines::new(path, text, TRIPLES_HEADER)?;
    let mut relations: Option<Vec<String>> = None;
    let mut triples = Vec::new();
    while let Some((n, line)) = lines.next_line() {
        if let Some(rest) = line.strip_prefix("#relations") {
            if relations.is_some() || !triples.is_empty() {
                return Err(lines.err(n, "`#relations` must come once, before any triple row"));
            }
            relations = Some(vocab_line(&lines, n, rest)?);
            continue;
        }
        if line.starts_with('#') {
            return Err(lines.err(n, format!("unknown directive `{line}`")));
        }
        let [head, relation, tail] = fields(&lines, n, line)?;
        if let Some(v) = &relations {
            if !v.iter().any(|r| r == relation) {
                return Err(lines.err(n, format!("unknown relation `{relation}`")));
            }
        }
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(TriplesFile { triples, relations })
}

/// Reads and validates a graph. Dangling ids and self-loops are reported
/// with the line of the offending triple.
pub fn load_graph(nodes_path: &Path, triples_path: &Path) -> Result<KnowledgeGraph> {
    let nodes = parse_nodes(nodes_path, &read_text(nodes_path)?)?;
    let triples = parse_triples(triples_path, &read_text(triples_path)?)?;
    let ids: std::collections::BTreeSet<&str> = nodes.nodes.iter().map(|n| n.id.as_str()).collect();
    for (i, t) in triples.triples.iter().enumerate() {
        for id in [&t.head, &t.tail] {
            if !ids.contains(id.as_str()) {
                return Err(Error::Parse {
                    path: triples_path.to_path_buf(),
                    line: triple_line(triples_path, i)?,
                    message: kgbridge_core::Error::DanglingId(id.clone()).to_string(),
                });
            }
        }
    }
    Ok(KnowledgeGraph::new(
        nodes.nodes,
        triples.triples,
        nodes.modalities,
        triples.relations,
    )?)
}

/// Line number of the `i`-th triple row (re-reads the file; only used on error).
fn triple_line(path: &Path, i: usize) -> Result<usize> {
    let text = read_text(path)?;
    let mut lines = Lines::new(path, &text, TRIPLES_HEADER)?;
    let mut k = 0;
    while let Some((n, line)) = lines.next_line() {
        if line.starts_with('#') {
            continue;
        }
        if k == i {
            return Ok(n);
        }
        k += 1;
    }
    Ok(0)
}

pub fn format_nodes(nodes: &[Node], modalities: Option<&[String]>) -> String {
    let mut s = String::from(NODES_HEADER);
    s.push('\n');
    if let Some(m) = modalities {
        let _ = writeln!(s, "#modalities\t{}", m.join("\t"));
    }
    for n in nodes {
        let _ = writeln!(s, "{}\t{}\t{}", n.id, n.modality, n.feature);
    }
    s
}

pub fn format_triples(triples: &[Triple], relations: Option<&[String]>) -> String {
    let mut s = String::from(TRIPLES_HEADER);
    s.push('\n');
    if let Some(r) = relations {
        let _ = writeln!(s, "#relations\t{}", r.join("\t"));
    }
    for t in triples {
        let _ = writeln!(s, "{}\t{}\t{}", t.head, t.relation, t.tail);
    }
    s
}

pub fn write_nodes(path: &Path, nodes: &[Node], modalities: Option<&[String]>) -> Result<()> {
    write_file(path, format_nodes(nodes, modalities).as_bytes())
}

pub fn write_triples(path: &Path, triples: &[Triple], relations: Option<&[String]>) -> Result<()> {
    write_file(path, format_triples(triples, relations).as_bytes())
}

pub fn write_graph(kg: &KnowledgeGraph, nodes_path: &Path, triples_path: &Path) -> Result<()> {
    write_nodes(nodes_path, kg.nodes(), Some(kg.modality_vocab()))?;
    write_triples(triples_path, kg.triples(), Some(kg.relation_vocab()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSidecar {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub counts: SplitCounts,
    pub strata: Vec<StratumSplit>,
    pub warnings: Vec<SplitWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

pub const SPLIT_FILES: [&str; 4] = ["train.tsv", "valid.tsv", "test.tsv", "split.json"];

/// Writes `train.tsv`, `valid.tsv`, `test.tsv` and the `split.json` sidecar.
pub fn write_split(dir: &Path, split: &TripleSplit) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| dir.join(f)).collect();
    write_triples(&paths[0], &split.train, None)?;
    write_triples(&paths[1], &split.valid, None)?;
    write_triples(&paths[2], &split.test, None)?;
    let sidecar = SplitSidecar {
        ratios: split.ratios,
        seed: split.seed,
        counts: SplitCounts {
            train: split.train.len(),
            valid: split.valid.len(),
            test: split.test.len(),
        },
        strata: split.strata.clone(),
        warnings: split.warnings.clone(),
    };
    write_json(&paths[3], &sidecar)?;
    Ok(paths)
}

pub fn read_split(dir: &Path) -> Result<TripleSplit> {
    let read = |name: &str| -> Result<Vec<Triple>> {
        let p = dir.join(name);
        Ok(parse_triples(&p, &read_text(&p)?)?.triples)
    };
    let sidecar: SplitSidecar = read_json(&dir.join("split.json"))?;
    let split = TripleSplit {
        train: read("train.tsv")?,
        valid: read("valid.tsv")?,
        test: read("test.tsv")?,
        ratios: sidecar.ratios,
        seed: sidecar.seed,
        strata: sidecar.strata,
        warnings: sidecar.warnings,
    };
    let got = [split.train.len(), split.valid.len(), split.test.len()];
    let want = [sidecar.counts.train, sidecar.counts.valid, sidecar.counts.test];
    if got != want {
        return Err(Error::format(
            &dir.join("split.json"),
            format!("sidecar counts {want:?} disagree with files {got:?}"),
        ));
    }
    Ok(split)
}

/// Precomputed embeddings: `#embeddings v1`, then `node_id<TAB>x1,x2,...`.
pub fn parse_imports(path: &Path, text: &str) -> Result<ImportTable> {
    let mut lines = Lines::new(path, text, EMBEDDINGS_HEADER)?;
    let mut out = ImportTable::new();
    while let Some((n, line)) = lines.next_line() {
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| lines.err(n, "expected `node_id<TAB>values`"))?;
        if id.is_empty() {
            return Err(lines.err(n, "empty node id"));
        }
        let v = values
            .split(',')
            .map(|x| x.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<f32>, _>>()
            .map_err(|e| lines.err(n, format!("bad value: {e}")))?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(lines.err(n, "non-finite value"));
        }
        if out.insert(id.to_string(), v).is_some() {
            return Err(lines.err(n, format!("duplicate node id `{id}`")));
        }
    }
    Ok(out)
}

pub fn read_imports(path: &Path) -> Result<ImportTable> {
    parse_imports(path, &read_text(path)?)
}
