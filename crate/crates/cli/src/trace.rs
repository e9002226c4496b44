//! Trace files for [`RunRecord`]s.
//!
//! Binary layout, version 1, all integers and floats little-endian:
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `DWTRACE\0` |
//! | 4 | `u32` format version |
//! | 4 | `u32` column count `c` |
//! | 8 | `u64` row count `n` |
//! | 8 | `f64` sample rate (Hz) |
//! | 8 | `u64` seed |
//! | 1 | `u8` status: 0 completed, 1 particle lost, 2 non-finite state |
//! | 8 | `f64` status time (s), NaN when completed |
//! | 32 | SHA-256 of the scenario, zeros when unknown |
//! | 2 + k | `u16` length and UTF-8 bytes of the variant label |
//! | per column | `u16` + name bytes, `u16` + unit bytes |
//! | 8·n·c | row-major IEEE-754 `f64` samples |
//!
//! The CSV form carries the same header as `# key=value` comment lines
//! followed by a `name[unit]` column row.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use darktrap_core::dynamics::{Column, RunRecord, RunStatus};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"DWTRACE\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    Csv,
    #[default]
    Bin,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Bin => "bin",
        }
    }
}

/// A record with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub record: RunRecord,
    pub scenario_sha256: [u8; 32],
    /// Controller label, e.g. `adaptive_2d` or `zero`.
    pub variant: String,
}

fn status_code(s: RunStatus) -> (u8, f64) {
    match s {
        RunStatus::Completed => (0, f64::NAN),
        RunStatus::ParticleLost { t } => (1, t),
        RunStatus::NonFinite { t } => (2, t),
    }
}

fn status_from(code: u8, t: f64) -> Result<RunStatus, CliError> {
    match code {
        0 => Ok(RunStatus::Completed),
        1 => Ok(RunStatus::ParticleLost { t }),
        2 => Ok(RunStatus::NonFinite { t }),
        _ => Err(CliError::Invalid(format!("unknown trace status code {code}"))),
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Trace {
    pub fn to_bin(&self) -> Vec<u8> {
        let rec = &self.record;
        let (n, c) = (rec.len(), Column::ALL.len());
        let mut out = Vec::with_capacity(128 + 8 * n * c);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&rec.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&rec.seed.to_le_bytes());
        let (code, t) = status_code(rec.status);
        out.push(code);
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&self.scenario_sha256);
        put_str(&mut out, &self.variant);
        for col in Column::ALL {
            put_str(&mut out, col.name());
            put_str(&mut out, col.unit());
        }
        let cols: Vec<&[f64]> = Column::ALL.iter().map(|&k| rec.col(k)).collect();
        for i in 0..n {
            for col in &cols {
                out.extend_from_slice(&col[i].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bin(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Cursor { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CliError::Invalid("not a binary trace (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Invalid(format!("unsupported trace version {version}")));
        }
        let c = r.u32()? as usize;
        let n = r.u64()? as usize;
        let fs = r.f64()?;
        let seed = r.u64()?;
        let code = r.take(1)?[0];
        let t = r.f64()?;
        let status = status_from(code, t)?;
        let sha: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let variant = r.str()?;
        let mut names = Vec::with_capacity(c);
        for _ in 0..c {
            let name = r.str()?;
            let _unit = r.str()?;
            names.push(name);
        }
        let order = column_order(&names)?;
        let body = n.checked_mul(c).and_then(|v| v.checked_mul(8)).ok_or_else(|| CliError::Invalid("trace size overflow".into()))?;
        let data = r.take(body)?;
        if r.pos != bytes.len() {
            return Err(CliError::Invalid("trailing bytes after trace data".into()));
        }
        let mut columns = vec![Vec::with_capacity(n); Column::ALL.len()];
        for (i, chunk) in data.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            columns[order[i % c]].push(v);
        }
        let record = RunRecord::from_columns(fs, seed, status, columns).map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(Self { record, scenario_sha256: sha, variant })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CliError> {
        let rec = &self.record;
        let mut w = BufWriter::new(w);
        let io = |e| CliError::io("writing CSV trace", e);
        let (code, t) = status_code(rec.status);
        writeln!(w, "# darktrap trace v{VERSION}").map_err(io)?;
        writeln!(w, "# sample_rate_hz={:e}", rec.sample_rate_hz).map_err(io)?;
        writeln!(w, "# seed={}", rec.seed).map_err(io)?;
        writeln!(w, "# status={code}").map_err(io)?;
        writeln!(w, "# status_time_s={t:e}").map_err(io)?;
        writeln!(w, "# scenario_sha256={}", hex::encode(self.scenario_sha256)).map_err(io)?;
        writeln!(w, "# variant={}", self.variant).map_err(io)?;
        w.flush().map_err(io)?;
        let mut cw = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| CliError::Other(format!("writing CSV trace: {e}"));
        cw.write_record(Column::ALL.iter().map(|c| format!("{}[{}]", c.name(), c.unit()))).map_err(csv_err)?;
        let cols: Vec<&[f64]> = Column::ALL.iter().map(|&k| rec.col(k)).collect();
        for i in 0..rec.len() {
            cw.write_record(cols.iter().map(|c| format!("{:e}", c[i]))).map_err(csv_err)?;
        }
        cw.flush().map_err(io)?;
        Ok(())
    }

    pub fn from_csv<R: Read>(r: R) -> Result<Self, CliError> {
        let mut reader = BufReader::new(r);
        let mut meta = std::collections::HashMap::new();
        let header = loop {
            let mut line = String::new();
            if reader.read_line(&mut line).map_err(|e| CliError::io("reading CSV trace", e))? == 0 {
                return Err(CliError::Invalid("CSV trace has no column header".into()));
            }
            match line.strip_prefix('#') {
                Some(c) => {
                    if let Some((k, v)) = c.trim().split_once('=') {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                None => break line,
            }
        };
        let get = |k: &str| meta.get(k).ok_or_else(|| CliError::Invalid(format!("CSV trace lacks `{k}`")));
        let parse_f = |k: &str| -> Result<f64, CliError> {
            get(k)?.parse().map_err(|_| CliError::Invalid(format!("CSV trace `{k}` is not a number")))
        };
        let fs = parse_f("sample_rate_hz")?;
        let seed: u64 = get("seed")?.parse().map_err(|_| CliError::Invalid("CSV trace seed".into()))?;
        let code: u8 = get("status")?.parse().map_err(|_| CliError::Invalid("CSV trace status".into()))?;
        let status = status_from(code, parse_f("status_time_s")?)?;
        let mut sha = [0u8; 32];
        hex::decode_to_slice(get("scenario_sha256")?, &mut sha).map_err(|e| CliError::Invalid(format!("CSV trace hash: {e}")))?;
        let variant = get("variant")?.clone();

        let names: Vec<String> = header.trim_end().split(',').map(|h| h.split('[').next().unwrap_or("").to_string()).collect();
        let order = column_order(&names)?;
        let mut columns = vec![Vec::new(); Column::ALL.len()];
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| CliError::Invalid(format!("CSV trace row {}: {e}", line + 1)))?;
            if row.len() != names.len() {
                return Err(CliError::Invalid(format!("CSV trace row {} has {} fields", line + 1, row.len())));
            }
            for (j, field) in row.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| CliError::Invalid(format!("CSV trace row {}: `{field}` is not a number", line + 1)))?;
                columns[order[j]].push(v);
            }
        }
        let record = RunRecord::from_columns(fs, seed, status, columns).map_err(|e| CliError::Invalid(e.to_string()))?;
        Ok(Self { record, scenario_sha256: sha, variant })
    }

    pub fn save(&self, path: &Path, format: Format) -> Result<(), CliError> {
        let ctx = || format!("writing {}", path.display());
        match format {
            Format::Bin => std::fs::write(path, self.to_bin()).map_err(|e| CliError::io(ctx(), e)),
            Format::Csv => {
                let f = std::fs::File::create(path).map_err(|e| CliError::io(ctx(), e))?;
                self.write_csv(f)
            }
        }
    }

    /// Reads either format, detected from the magic bytes.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Invalid(format!("cannot read trace {}: {e}", path.display())))?;
        let with_path = |e: CliError| match e {
            CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
            other => other,
        };
        if bytes.starts_with(MAGIC) {
            Self::from_bin(&bytes).map_err(with_path)
        } else {
            Self::from_csv(bytes.as_slice()).map_err(with_path)
        }
    }
}

/// Maps file column positions to [`Column::ALL`] indices; every column must appear once.
fn column_order(names: &[String]) -> Result<Vec<usize>, CliError> {
    let mut seen = [false; Column::ALL.len()];
    let mut order = Vec::with_capacity(names.len());
    for n in names {
        let c = Column::from_name(n).ok_or_else(|| CliError::Invalid(format!("unknown trace column `{n}`")))?;
        if std::mem::replace(&mut seen[c as usize], true) {
            return Err(CliError::Invalid(format!("duplicate trace column `{n}`")));
        }
        order.push(c as usize);
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CliError::Invalid(format!("trace lacks column `{}`", Column::ALL[i].name())));
    }
    Ok(order)
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or_else(|| CliError::Invalid("truncated binary trace".into()))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String, CliError> {
        let n = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Invalid("trace string is not UTF-8".into()))
    }
}
