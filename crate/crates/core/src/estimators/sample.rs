use std::fmt;
use std::path::Path;

use crate::error::{domain, usage, Error, Result};

/// An `n × d` matrix of nonnegative observations, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl Sample {
    pub fn new(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return usage("sample dimension must be at least 1");
        }
        if data.is_empty() || data.len() % d != 0 {
            return usage(format!(
                "sample buffer of length {} is not a nonempty multiple of d = {d}",
                data.len()
            ));
        }
        if let Some((pos, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return domain(format!(
                "observation {} coordinate {} is {v}; entries must be finite and ≥ 0",
                pos / d,
                pos % d
            ));
        }
        Ok(Self { n: data.len() / d, data, d })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return usage("sample needs at least one observation");
        };
        let d = first.as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return usage(format!("row {i} has {} columns, expected {d}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(data, d)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.d + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copy of the sample with observation `i` removed.
    pub fn without(&self, i: usize) -> Result<Self> {
        if i >= self.n {
            return usage(format!("observation index {i} out of range for n = {}", self.n));
        }
        if self.n == 1 {
            return usage("cannot remove the only observation");
        }
        let mut data = Vec::with_capacity((self.n - 1) * self.d);
        data.extend_from_slice(&self.data[..i * self.d]);
        data.extend_from_slice(&self.data[(i + 1) * self.d..]);
        Ok(Self { data, n: self.n - 1, d: self.d })
    }

    /// Reads delimited text: one observation per line, comma or whitespace
    /// separated, optional header (detected by a non-numeric first token),
    /// blank lines and `#` comments ignored.
    pub fn read_delimited(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_delimited(&text, path)
    }

    pub fn parse_delimited(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut data = Vec::new();
        let mut d = None;
        let mut seen_row = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .collect();
            if !seen_row {
                seen_row = true;
                if tokens.first().is_some_and(|t| t.parse::<f64>().is_err()) {
                    continue; // header
                }
            }
            match d {
                None => d = Some(tokens.len()),
                Some(d) if d != tokens.len() => {
                    return Err(parse_err(
                        line_no,
                        format!("expected {d} columns, found {}", tokens.len()),
                    ))
                }
                _ => {}
            }
            for t in tokens {
                let v: f64 = t
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("not a number: {t:?}")))?;
                if !v.is_finite() || v < 0.0 {
                    return Err(parse_err(
                        line_no,
                        format!("observations must be finite and nonnegative, got {v}"),
                    ));
                }
                data.push(v);
            }
        }
        match d {
            Some(d) if d > 0 => Self::new(data, d),
            _ => Err(parse_err(0, "no observations found".into())),
        }
    }
}

/// Per-coordinate smoothing levels `m = (m_1, …, m_d)`, each at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SmoothingVector(Vec<u32>);

impl SmoothingVector {
    pub fn new(m: Vec<u32>) -> Result<Self> {
        if m.is_empty() {
            return usage("smoothing vector must have at least one coordinate");
        }
        if m.iter().any(|&v| v == 0) {
            return usage(format!("smoothing levels must be ≥ 1, got {m:?}"));
        }
        Ok(Self(m))
    }

    pub fn isotropic(m: u32, d: usize) -> Result<Self> {
        Self::new(vec![m; d])
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn get(&self, j: usize) -> u32 {
        self.0[j]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn min_level(&self) -> u32 {
        *self.0.iter().min().expect("nonempty")
    }

    pub fn max_level(&self) -> u32 {
        *self.0.iter().max().expect("nonempty")
    }

    pub(crate) fn with(&self, j: usize, value: u32) -> Self {
        let mut v = self.0.clone();
        v[j] = value;
        Self(v)
    }
}

impl fmt::Display for SmoothingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, m) in self.0.iter().enumerate() {
            if j > 0 {
                f.write_str(",")?;
            }
            write!(f, "{m}")?;
        }
        Ok(())
    }
}

const SNAP_TOL: f64 = 1e-9;

/// `ceil(m·x)`, except that a product within `1e-9` of an integer is snapped
/// to it first so representation error in `x` cannot move the result by one.
#[inline]
pub fn snapped_ceil(m: u32, x: f64) -> u64 {
    let y = m as f64 * x;
    let r = y.round();
    if (y - r).abs() <= SNAP_TOL {
        r as u64
    } else {
        y.ceil() as u64
    }
}

/// `W_ij = ceil(m_j X_ij)` for one (sample, smoothing vector) pair.
#[derive(Debug, Clone)]
pub struct CeilCache {
    w: Vec<u64>,
    d: usize,
}

impl CeilCache {
    pub fn new(sample: &Sample, m: &SmoothingVector) -> Result<Self> {
        if m.d() != sample.d() {
            return usage(format!(
                "smoothing vector has {} coordinates, sample has {}",
                m.d(),
                sample.d()
            ));
        }
        let d = sample.d();
        let w = sample
            .as_slice()
            .iter()
            .enumerate()
            .map(|(pos, &x)| snapped_ceil(m.get(pos % d), x))
            .collect();
        Ok(Self { w, d })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.w[i * self.d..(i + 1) * self.d]
    }

    /// Column `j` of the cache, i.e. `W_1j, …, W_nj`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = u64> + '_ {
        self.w.iter().skip(j).step_by(self.d).copied()
    }
}
