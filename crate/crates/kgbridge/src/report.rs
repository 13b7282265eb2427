//! Training logs, per-triple ranks and similarity matrices.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kgbridge_core::graph::Triple;
use kgbridge_core::tensor::Tensor;
use serde::Serialize;

use crate::error::{read_text, write_file, Error, Result};

/// Appends one JSON object per line.
pub struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(JsonLines {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::json(&self.path, e))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// `head<TAB>relation<TAB>tail<TAB>rank`, one line per evaluated triple.
pub fn format_ranks(triples: &[Triple], ranks: &[usize]) -> String {
    let mut s = String::from("head\trelation\ttail\trank\n");
    for (t, r) in triples.iter().zip(ranks) {
        let _ = writeln!(s, "{}\t{}\t{}\t{r}", t.head, t.relation, t.tail);
    }
    s
}

pub fn write_ranks(path: &Path, triples: &[Triple], ranks: &[usize]) -> Result<()> {
    write_file(path, format_ranks(triples, ranks).as_bytes())
}

/// Square similarity matrix: a line of `n` tab-separated ids, then `n`
/// lines of `n` values.
pub fn format_matrix(ids: &[String], m: &Tensor<f64>) -> String {
    let mut s = ids.join("\t");
    s.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{x}")).collect();
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    s
}

pub fn parse_matrix(path: &Path, text: &str) -> Result<(Vec<String>, Tensor<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (_, head) = lines.next().ok_or_else(|| err(1, "missing id header".into()))?;
    let ids: Vec<String> = head.split('\t').map(String::from).collect();
    let n = ids.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (i, line) in lines {
        let vals = line
            .split('\t')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| err(i + 1, format!("bad value: {e}")))?;
        if vals.len() != n {
            return Err(err(i + 1, format!("expected {n} values, found {}", vals.len())));
        }
        data.extend(vals);
        rows += 1;
    }
    if rows != n {
        return Err(Error::format(path, format!("expected {n} rows, found {rows}")));
    }
    Ok((ids, Tensor::matrix(n, n, data)?))
}

pub fn read_matrix(path: &Path) -> Result<(Vec<String>, Tensor<f64>)> {
    parse_matrix(path, &read_text(path)?)
}

pub fn write_matrix(path: &Path, ids: &[String], m: &Tensor<f64>) -> Result<()> {
    write_file(path, format_matrix(ids, m).as_bytes())
}
