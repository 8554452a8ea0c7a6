//! File formats: CSV and binary row streams, labeled CSV, coreset files.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::WeightedCoreset;
use crate::linalg::DenseMatrix;
use crate::sampling::{Coreset, CoresetEntry, CoresetMeta};

pub const BINARY_MAGIC: &[u8; 4] = b"LPRW";

/// Format of a row stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowFormat {
    Csv,
    Bin,
}

fn parse_fields(line: &str, lineno: usize) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            let f = f.trim();
            let v: f64 =
                f.parse().map_err(|_| Error::Parse { line: lineno, msg: format!("cannot parse {f:?} as a number") })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse { line: lineno, msg: format!("non-finite value {f:?}") })
            }
        })
        .collect()
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Streaming reader over CSV rows (blank lines and `#` comments skipped).
pub struct CsvRows<R> {
    inner: std::io::Lines<R>,
    lineno: usize,
    d: Option<usize>,
}

impl<R: BufRead> CsvRows<R> {
    pub fn new(reader: R) -> Self {
        Self { inner: reader.lines(), lineno: 0, d: None }
    }
}

impl<R: BufRead> Iterator for CsvRows<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.inner.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.lineno += 1;
            if is_skippable(&line) {
                continue;
            }
            let row = match parse_fields(&line, self.lineno) {
                Ok(r) => r,
                Err(e) => return Some(Err(e)),
            };
            match self.d {
                None => self.d = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Some(Err(Error::Parse {
                        line: self.lineno,
                        msg: format!("expected {d} fields, found {}", row.len()),
                    }))
                }
                _ => {}
            }
            return Some(Ok(row));
        }
    }
}

/// Streaming reader over the binary row format: magic, u32 `d`, then rows
/// of `d` little-endian f64 values until end of input.
pub struct BinRows<R> {
    inner: R,
    d: usize,
    row: usize,
}

impl<R: Read> BinRows<R> {
    pub fn new(mut reader: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse { line: 0, msg: "missing LPRW magic".into() });
        }
        let mut b4 = [0u8; 4];
        reader.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        if d == 0 {
            return Err(Error::Parse { line: 0, msg: "dimension must be positive".into() });
        }
        Ok(Self { inner: reader, d, row: 0 })
    }

    pub fn dim(&self) -> usize {
        self.d
    }
}

impl<R: Read> Iterator for BinRows<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = vec![0u8; 8 * self.d];
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(k) => filled += k,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Some(Err(e.into())),
            }
        }
        self.row += 1;
        if filled == 0 {
            return None;
        }
        if filled < buf.len() {
            return Some(Err(Error::Parse { line: self.row, msg: "truncated row".into() }));
        }
        let row: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if row.iter().any(|x| !x.is_finite()) {
            return Some(Err(Error::Parse { line: self.row, msg: "non-finite value".into() }));
        }
        Some(Ok(row))
    }
}

/// Collects a row stream into a matrix.
pub fn collect_rows<I: Iterator<Item = Result<Vec<f64>>>>(rows: I) -> Result<DenseMatrix> {
    let mut m: Option<DenseMatrix> = None;
    for (i, r) in rows.enumerate() {
        let r = r?;
        let m = match &mut m {
            Some(m) => m,
            None => m.insert(DenseMatrix::new(r.len()).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?),
        };
        m.push_row(&r).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
    }
    m.ok_or_else(|| Error::Parse { line: 0, msg: "input has no rows".into() })
}

pub fn read_csv_matrix<R: BufRead>(reader: R) -> Result<DenseMatrix> {
    collect_rows(CsvRows::new(reader))
}

pub fn read_bin_matrix<R: Read>(reader: R) -> Result<DenseMatrix> {
    collect_rows(BinRows::new(reader)?)
}

pub fn write_csv_matrix<W: Write>(mut out: W, a: &DenseMatrix) -> Result<()> {
    for r in a.rows_iter() {
        let line: Vec<String> = r.iter().map(|v| fmt17(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_bin_matrix<W: Write>(mut out: W, a: &DenseMatrix) -> Result<()> {
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(a.ncols() as u32).to_le_bytes())?;
    for v in a.as_slice() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Labeled CSV: `label(±1), z1, ..., zd`.
pub fn read_labeled_csv<R: BufRead>(reader: R) -> Result<(Vec<f64>, DenseMatrix)> {
    let mut labels = Vec::new();
    let mut z: Option<DenseMatrix> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if is_skippable(&line) {
            continue;
        }
        let f = parse_fields(&line, lineno)?;
        if f.len() < 2 {
            return Err(Error::Parse { line: lineno, msg: "expected a label and at least one feature".into() });
        }
        if f[0] != 1.0 && f[0] != -1.0 {
            return Err(Error::Parse { line: lineno, msg: format!("label must be +1 or -1, got {}", f[0]) });
        }
        labels.push(f[0]);
        let m = match &mut z {
            Some(m) => m,
            None => z.insert(DenseMatrix::new(f.len() - 1)?),
        };
        m.push_row(&f[1..]).map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
    }
    let z = z.ok_or_else(|| Error::Parse { line: 0, msg: "input has no rows".into() })?;
    Ok((labels, z))
}

/// Decimal with 17 significant digits; parses back to the same f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoresetHeader {
    pub p: f64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub eps: f64,
    pub delta: f64,
}

impl CoresetHeader {
    pub fn of(c: &Coreset) -> Self {
        Self { p: c.p, n: c.meta.n, d: c.d, seed: c.meta.seed, eps: c.meta.epsilon, delta: c.meta.delta }
    }

    fn line(&self) -> String {
        format!(
            "lpcoreset v1 p={} n={} d={} seed={} eps={} delta={}",
            self.p, self.n, self.d, self.seed, self.eps, self.delta
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse { line: 1, msg: msg.to_string() };
        let mut it = line.split_whitespace();
        if it.next() != Some("lpcoreset") || it.next() != Some("v1") {
            return Err(bad("missing 'lpcoreset v1' header"));
        }
        let mut h = CoresetHeader { p: f64::NAN, n: 0, d: 0, seed: 0, eps: f64::NAN, delta: f64::NAN };
        let mut seen = 0u8;
        for kv in it {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("header fields must be key=value"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad value for {k}")));
            let int = |v: &str| v.parse::<u64>().map_err(|_| bad(&format!("bad value for {k}")));
            match k {
                "p" => h.p = num(v)?,
                "n" => h.n = int(v)? as usize,
                "d" => h.d = int(v)? as usize,
                "seed" => h.seed = int(v)?,
                "eps" => h.eps = num(v)?,
                "delta" => h.delta = num(v)?,
                _ => return Err(bad(&format!("unknown header field {k}"))),
            }
            seen += 1;
        }
        if seen != 6 || h.d == 0 {
            return Err(bad("header needs p, n, d, seed, eps and delta"));
        }
        Ok(h)
    }
}

/// Writes the coreset file: header line, then `index,scale,prob,v1..vd`.
pub fn write_coreset<W: Write>(mut out: W, c: &Coreset) -> Result<()> {
    writeln!(out, "{}", CoresetHeader::of(c).line())?;
    for e in &c.entries {
        write!(out, "{},{},{}", e.index, fmt17(e.scale), fmt17(e.prob))?;
        for v in &e.row {
            write!(out, ",{}", fmt17(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_coreset<R: BufRead>(reader: R) -> Result<Coreset> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => CoresetHeader::parse(&l?)?,
        None => return Err(Error::Parse { line: 1, msg: "empty coreset file".into() }),
    };
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if is_skippable(&line) {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let index: usize = parts
            .next()
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::Parse { line: lineno, msg: "bad index".into() })?;
        let rest = parse_fields(parts.next().unwrap_or(""), lineno)?;
        if rest.len() != header.d + 2 {
            return Err(Error::Parse { line: lineno, msg: format!("expected {} fields", header.d + 3) });
        }
        entries.push(CoresetEntry { index, scale: rest[0], prob: rest[1], row: rest[2..].to_vec() });
    }
    Ok(Coreset {
        p: header.p,
        d: header.d,
        entries,
        meta: CoresetMeta {
            seed: header.seed,
            n: header.n,
            epsilon: header.eps,
            delta: header.delta,
            sum_weights: 0.0,
            kappa_ol_estimate: 0.0,
        },
    })
}

/// Companion metadata written next to every coreset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoresetSummary {
    pub sum_weights: f64,
    pub kept_count: usize,
    pub kappa_ol_estimate: f64,
}

impl CoresetSummary {
    pub fn of(c: &Coreset) -> Self {
        Self { sum_weights: c.meta.sum_weights, kept_count: c.len(), kappa_ol_estimate: c.meta.kappa_ol_estimate }
    }
}

/// A weighted GLM coreset in the coreset file format. With `p = 1` in the
/// header the scale column is exactly the weight `1/π_i`.
pub fn weighted_as_coreset(w: &WeightedCoreset, epsilon: f64) -> Coreset {
    Coreset {
        p: 1.0,
        d: w.d,
        entries: w
            .entries
            .iter()
            .map(|e| CoresetEntry { index: e.index, row: e.row.clone(), scale: e.weight, prob: e.prob })
            .collect(),
        meta: CoresetMeta {
            seed: w.seed,
            n: w.n,
            epsilon,
            delta: 0.0,
            sum_weights: w.sum_sensitivities,
            kappa_ol_estimate: 0.0,
        },
    }
}

pub fn write_weights_csv<W: Write>(mut out: W, w: &[f64]) -> Result<()> {
    writeln!(out, "index,weight")?;
    for (i, v) in w.iter().enumerate() {
        writeln!(out, "{i},{}", fmt17(*v))?;
    }
    Ok(())
}
