//! CSV panel files, result tables and run manifests.
//!
//! Flows: `t,origin,destination,count`, sparse (absent rows are zero), with
//! t = 0 as an optional pre-series bin. Occupancy: `t,node,count` for
//! t = −1..=T. When no occupancy table is given, nⱼₜ is recovered from the
//! flows as the total arriving at j (stays included).

use std::collections::HashSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::hex_digest;
use crate::network::{edge_universe, EdgeKey, FlowPanel};
use crate::{Error, Result};

pub const FLOWS_HEADER: [&str; 4] = ["t", "origin", "destination", "count"];
pub const OCCUPANCY_HEADER: [&str; 3] = ["t", "node", "count"];

/// Declared panel dimensions; unset fields are inferred from the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PanelShape {
    pub nodes: Option<usize>,
    pub len: Option<usize>,
}

struct Row {
    line: u64,
    fields: Vec<String>,
}

fn parse_error(name: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_string(),
        line,
        message: message.into(),
    }
}

fn read_rows(bytes: &[u8], name: &str, header: &[&str]) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let found = reader
        .headers()
        .map_err(|e| parse_error(name, 1, e.to_string()))?
        .clone();
    if found.is_empty() && bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(Vec::new());
    }
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_error(
            name,
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(name, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(Row {
            line,
            fields: record.iter().map(str::to_string).collect(),
        });
    }
    Ok(rows)
}

fn field<T: FromStr>(row: &Row, k: usize, column: &str, name: &str) -> Result<T> {
    row.fields[k].parse().map_err(|_| {
        parse_error(
            name,
            row.line,
            format!("{column}: `{}` is not a valid integer", row.fields[k]),
        )
    })
}

fn count(row: &Row, k: usize, name: &str) -> Result<u64> {
    let v: i64 = field(row, k, "count", name)?;
    u64::try_from(v).map_err(|_| parse_error(name, row.line, format!("negative count {v}")))
}

fn index(row: &Row, k: usize, column: &str, name: &str) -> Result<usize> {
    let v: i64 = field(row, k, column, name)?;
    usize::try_from(v).map_err(|_| parse_error(name, row.line, format!("{column} {v} is negative")))
}

/// Parses panel tables from memory. `occupancy` carries the table bytes
/// and a name used in error messages.
pub fn read_panel(
    flows: &[u8],
    flows_name: &str,
    occupancy: Option<(&[u8], &str)>,
    shape: PanelShape,
) -> Result<FlowPanel> {
    let mut flow_rows = Vec::new();
    let mut seen = HashSet::new();
    for row in read_rows(flows, flows_name, &FLOWS_HEADER)? {
        let t = index(&row, 0, "t", flows_name)?;
        let origin = index(&row, 1, "origin", flows_name)?;
        let destination = index(&row, 2, "destination", flows_name)?;
        let x = count(&row, 3, flows_name)?;
        if origin == 0 && destination == 0 {
            return Err(parse_error(
                flows_name,
                row.line,
                "edge (0,0) is not part of the network",
            ));
        }
        if !seen.insert((t, origin, destination)) {
            return Err(parse_error(
                flows_name,
                row.line,
                format!("duplicate row for t = {t}, edge ({origin},{destination})"),
            ));
        }
        flow_rows.push((row.line, t, EdgeKey::new(origin, destination), x));
    }

    let mut occ_rows = Vec::new();
    if let Some((bytes, name)) = occupancy {
        let mut seen = HashSet::new();
        for row in read_rows(bytes, name, &OCCUPANCY_HEADER)? {
            let t: i64 = field(&row, 0, "t", name)?;
            let node = index(&row, 1, "node", name)?;
            let n = count(&row, 2, name)?;
            if t < -1 {
                return Err(parse_error(
                    name,
                    row.line,
                    format!("t = {t} before the first pre-series time -1"),
                ));
            }
            if node == 0 {
                return Err(parse_error(name, row.line, "node 0 is outside the network"));
            }
            if !seen.insert((t, node)) {
                return Err(parse_error(
                    name,
                    row.line,
                    format!("duplicate row for t = {t}, node {node}"),
                ));
            }
            occ_rows.push((row.line, t, node, n));
        }
    }

    let max_index = flow_rows
        .iter()
        .map(|(_, _, e, _)| e.origin.max(e.destination))
        .chain(occ_rows.iter().map(|r| r.2))
        .max();
    let nodes = match (shape.nodes, max_index) {
        (Some(n), _) => n,
        (None, Some(m)) => m,
        (None, None) => {
            return Err(parse_error(
                flows_name,
                1,
                "empty panel and no declared node count",
            ));
        }
    };
    let max_t = flow_rows
        .iter()
        .map(|r| r.1 as i64)
        .chain(occ_rows.iter().map(|r| r.1))
        .max()
        .unwrap_or(0);
    let len = shape.len.unwrap_or(max_t.max(0) as usize);

    let mut panel = FlowPanel::new(nodes, len);
    for &(line, t, edge, x) in &flow_rows {
        panel
            .set_flow(edge, t, x)
            .map_err(|e| parse_error(flows_name, line, e.to_string()))?;
    }
    match occupancy {
        Some((_, name)) => {
            let mut have = vec![(false, false); nodes];
            for &(line, t, node, n) in &occ_rows {
                panel
                    .set_occupancy(node, t, n)
                    .map_err(|e| parse_error(name, line, e.to_string()))?;
                match t {
                    -1 => have[node - 1].0 = true,
                    0 => have[node - 1].1 = true,
                    _ => {}
                }
            }
            for (k, (minus_one, zero)) in have.into_iter().enumerate() {
                panel.synthesize_pre_series(k + 1, minus_one, zero);
            }
        }
        None => derive_occupancy(&mut panel),
    }
    Ok(panel)
}

/// nⱼₜ = Σᵢ xᵢⱼₜ and, with a pre-series bin, nᵢ,₋₁ = Σⱼ xᵢⱼ₀.
fn derive_occupancy(panel: &mut FlowPanel) {
    let nodes = panel.nodes();
    let pre = panel.has_pre_series();
    let first = if pre { 0 } else { 1 };
    for j in 1..=nodes {
        for t in first..=panel.len() {
            let n: u64 = (0..=nodes).map(|i| panel.flow(EdgeKey::new(i, j), t)).sum();
            panel.set_occupancy(j, t as i64, n).expect("index in range");
        }
        if pre {
            let n: u64 = (0..=nodes).map(|d| panel.flow(EdgeKey::new(j, d), 0)).sum();
            panel.set_occupancy(j, -1, n).expect("index in range");
        }
        panel.synthesize_pre_series(j, pre, pre);
    }
}

/// Reads a panel from disk. Without an occupancy file, occupancies are
/// recovered from the flows.
pub fn parse_panel(flows: &Path, occupancy: Option<&Path>, shape: PanelShape) -> Result<FlowPanel> {
    let flow_bytes = std::fs::read(flows)?;
    let occ_bytes = occupancy.map(std::fs::read).transpose()?;
    let occ_name = occupancy.map(|p| p.display().to_string());
    read_panel(
        &flow_bytes,
        &flows.display().to_string(),
        occ_bytes.as_deref().zip(occ_name.as_deref()),
        shape,
    )
}

/// Writes flows sparsely and occupancies densely, so that reading the
/// files back reproduces the panel exactly.
pub fn write_panel(panel: &FlowPanel, flows: &Path, occupancy: &Path) -> Result<()> {
    let mut w = Table::create(flows, &FLOWS_HEADER)?;
    let universe = edge_universe(panel.nodes());
    let first = if panel.has_pre_series() { 0 } else { 1 };
    for t in first..=panel.len() {
        let mut wrote = false;
        for &e in &universe {
            let x = panel.flow(e, t);
            if x > 0 {
                w.row([
                    t.to_string(),
                    e.origin.to_string(),
                    e.destination.to_string(),
                    x.to_string(),
                ])?;
                wrote = true;
            }
        }
        // An all-zero pre-series bin still has to be marked present.
        if t == 0 && !wrote {
            if let Some(e) = universe.first() {
                w.row([
                    "0".to_string(),
                    e.origin.to_string(),
                    e.destination.to_string(),
                    "0".to_string(),
                ])?;
            }
        }
    }
    w.finish()?;

    let mut w = Table::create(occupancy, &OCCUPANCY_HEADER)?;
    for t in -1..=panel.len() as i64 {
        for i in 1..=panel.nodes() {
            w.row([
                t.to_string(),
                i.to_string(),
                panel.occupancy(i, t).to_string(),
            ])?;
        }
    }
    w.finish()
}

/// Buffered CSV table writer with a fixed header.
pub struct Table {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(File::create(path)?));
        inner.write_record(header).map_err(|e| csv_error(path, e))?;
        Ok(Table {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| csv_error(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Internal(format!("{}: {other:?}", path.display())),
    }
}

/// Shortest round-trip text for a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Reads a result table into header-keyed rows.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let name = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => parse_error(&name, 0, format!("{other:?}")),
    })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(&name, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record
            .map_err(|e| parse_error(&name, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

/// Provenance of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub input_hash: String,
    pub seed: u64,
    pub outputs: Vec<OutputDigest>,
}

impl Manifest {
    pub fn path(out: &Path, command: &str) -> PathBuf {
        out.join(format!("manifest_{command}.json"))
    }

    /// Digests the files (relative to `out`) and writes the manifest.
    pub fn write(
        out: &Path,
        command: &str,
        config_hash: String,
        input_hash: String,
        seed: u64,
        files: &[&str],
    ) -> Result<Manifest> {
        let outputs = files
            .iter()
            .map(|f| {
                Ok(OutputDigest {
                    file: f.to_string(),
                    sha256: hex_digest(&std::fs::read(out.join(f))?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let m = Manifest {
            command: command.to_string(),
            config_hash,
            input_hash,
            seed,
            outputs,
        };
        let mut text =
            serde_json::to_string_pretty(&m).map_err(|e| Error::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(Self::path(out, command), text)?;
        Ok(m)
    }

    pub fn read(out: &Path, command: &str) -> Result<Option<Manifest>> {
        let path = Self::path(out, command);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| parse_error(&path.display().to_string(), e.line() as u64, e.to_string()))
    }
}

/// Hash of a sequence of input blobs, each length-prefixed.
pub fn input_hash<'a>(blobs: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut all = Vec::new();
    for b in blobs {
        all.extend_from_slice(&(b.len() as u64).to_le_bytes());
        all.extend_from_slice(b);
    }
    hex_digest(&all)
}
