//! Dataset ingestion and versioned artifact containers.
//!
//! Two input formats: dense CSV (one point per line) and sparse triplets
//! (header "n d nnz", then "row col value" lines, 0-indexed). Three artifact
//! payloads share one container: subspace coresets, k-median coresets, and
//! augmented matrices from a reduction. Each container exists in a textual
//! mode, decimals at 17 significant digits so values survive a round trip
//! bit for bit, and a binary mode, IEEE-754 binary64 little-endian, which is
//! the compact default. Containers carry an opaque provenance string so a
//! command can embed its full configuration for replay.

use std::path::Path;

use nalgebra::DMatrix;

use crate::dimred::{AugmentedMatrix, ReductionReport};
use crate::error::{Error, Result};
use crate::kmedian::{KMedianMeta, WeightedCoreset};
use crate::linalg::{PointMatrix, Subspace};
use crate::subspace::{SubspaceCoreset, SubspaceMeta};

const BINARY_MAGIC: &[u8; 8] = b"CORESETS";
const TEXT_MAGIC: &str = "coresets-container";
const VERSION: u32 = 1;

const TAG_SUBSPACE: u8 = 1;
const TAG_KMEDIAN: u8 = 2;
const TAG_AUGMENTED: u8 = 3;

/// Everything a command can emit or reload.
#[derive(Debug, Clone)]
pub enum Artifact {
    Subspace(SubspaceCoreset),
    KMedian(WeightedCoreset),
    /// A reduction result together with its trace and the build parameters.
    Augmented { matrix: AugmentedMatrix, report: ReductionReport, p: f64, k: usize },
}

impl Artifact {
    pub fn type_name(&self) -> &'static str {
        match self {
            Artifact::Subspace(_) => "subspace",
            Artifact::KMedian(_) => "kmedian",
            Artifact::Augmented { .. } => "augmented",
        }
    }

    fn type_tag(&self) -> u8 {
        match self {
            Artifact::Subspace(_) => TAG_SUBSPACE,
            Artifact::KMedian(_) => TAG_KMEDIAN,
            Artifact::Augmented { .. } => TAG_AUGMENTED,
        }
    }

    fn header_p(&self) -> f64 {
        match self {
            Artifact::Subspace(c) => c.p(),
            Artifact::KMedian(_) => 1.0,
            Artifact::Augmented { p, .. } => *p,
        }
    }

    fn header_k(&self) -> usize {
        match self {
            Artifact::Subspace(c) => c.k(),
            Artifact::KMedian(c) => c.k(),
            Artifact::Augmented { k, .. } => *k,
        }
    }
}

/// Formats a value with 17 significant digits, enough to pin down any f64.
fn dec(v: f64) -> String {
    format!("{v:.16e}")
}

// ---- ingestion ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    DenseCsv,
    SparseTriplets,
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense-csv" | "dense_csv" | "csv" => Ok(InputFormat::DenseCsv),
            "sparse-triplets" | "sparse_triplets" | "triplets" => Ok(InputFormat::SparseTriplets),
            other => Err(Error::invalid_parameter(
                "format",
                format!("unknown input format {other:?}; use dense-csv or sparse-triplets"),
            )),
        }
    }
}

/// Reads a point matrix from a file in the given format.
pub fn ingest(path: &Path, format: InputFormat) -> Result<PointMatrix> {
    let text = std::fs::read_to_string(path)?;
    match format {
        InputFormat::DenseCsv => parse_dense_csv(&text),
        InputFormat::SparseTriplets => parse_sparse_triplets(&text),
    }
}

fn parse_err(line: usize, detail: impl Into<String>) -> Error {
    Error::Parse { line, detail: detail.into() }
}

/// One point per line, comma-separated decimals. Blank lines are skipped;
/// anything else malformed is reported with its 1-based line number.
pub fn parse_dense_csv(text: &str) -> Result<PointMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for tok in trimmed.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| {
                parse_err(idx + 1, format!("bad decimal {:?}", tok.trim()))
            })?;
            if !v.is_finite() {
                return Err(parse_err(idx + 1, format!("non-finite value {:?}", tok.trim())));
            }
            row.push(v);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(parse_err(
                idx + 1,
                format!("row has {} values, previous rows have {}", row.len(), width),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no data rows".into()));
    }
    PointMatrix::from_rows(&rows)
}

/// Header "n d nnz", then exactly nnz lines "row col value", 0-indexed.
pub fn parse_sparse_triplets(text: &str) -> Result<PointMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hidx, header) = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("no header line".into()))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(parse_err(hidx + 1, "header must be \"n d nnz\""));
    }
    let n: usize =
        toks[0].parse().map_err(|_| parse_err(hidx + 1, format!("bad count {:?}", toks[0])))?;
    let d: usize =
        toks[1].parse().map_err(|_| parse_err(hidx + 1, format!("bad count {:?}", toks[1])))?;
    let nnz: usize =
        toks[2].parse().map_err(|_| parse_err(hidx + 1, format!("bad count {:?}", toks[2])))?;

    let mut triplets = Vec::with_capacity(nnz);
    let mut last_line = hidx + 1;
    for (idx, line) in lines {
        if triplets.len() == nnz {
            return Err(parse_err(idx + 1, "extra line after the declared nnz triplets"));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(idx + 1, "triplet must be \"row col value\""));
        }
        let r: usize =
            toks[0].parse().map_err(|_| parse_err(idx + 1, format!("bad index {:?}", toks[0])))?;
        let c: usize =
            toks[1].parse().map_err(|_| parse_err(idx + 1, format!("bad index {:?}", toks[1])))?;
        let v: f64 =
            toks[2].parse().map_err(|_| parse_err(idx + 1, format!("bad decimal {:?}", toks[2])))?;
        if r >= n || c >= d {
            return Err(parse_err(idx + 1, format!("coordinate ({r}, {c}) outside {n}x{d}")));
        }
        if !v.is_finite() {
            return Err(parse_err(idx + 1, format!("non-finite value {:?}", toks[2])));
        }
        triplets.push((r, c, v));
        last_line = idx + 1;
    }
    if triplets.len() != nnz {
        return Err(parse_err(
            last_line,
            format!("header declared {} triplets, found {}", nnz, triplets.len()),
        ));
    }
    PointMatrix::from_triplets(n, d, &triplets)
}

/// Dense CSV text with 17-significant-digit decimals; parsing it back
/// reproduces every value bit for bit.
pub fn write_dense_csv(a: &PointMatrix) -> String {
    let mut buf = vec![0.0; a.d()];
    let mut out = String::new();
    for i in 0..a.n() {
        a.row_dense(i, &mut buf);
        let line: Vec<String> = buf.iter().map(|v| dec(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Sparse triplet text for the stored nonzeros.
pub fn write_sparse_triplets(a: &PointMatrix) -> String {
    let mut out = format!("{} {} {}\n", a.n(), a.d(), a.nnz());
    for i in 0..a.n() {
        a.for_each_nonzero(i, |c, v| {
            out.push_str(&format!("{} {} {}\n", i, c, dec(v)));
        });
    }
    out
}

// ---- binary container ----

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            push_f64(out, m[(i, j)]);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(parse_err(
                0,
                format!("container truncated: need {} bytes at offset {}", n, self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| parse_err(0, format!("count {v} does not fit")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.usize()?;
        // Guards length prefixes pointing past the buffer before allocating.
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| parse_err(0, "container string is not UTF-8"))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = self.f64()?;
            }
        }
        Ok(m)
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(parse_err(
                0,
                format!("{} trailing bytes after the payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Binary container: magic, version, type tag, p, k, then the payload with
/// all reals as little-endian binary64. Round-trips bit for bit.
pub fn encode_binary(a: &Artifact, provenance: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(a.type_tag());
    push_f64(&mut out, a.header_p());
    push_u64(&mut out, a.header_k() as u64);
    match a {
        Artifact::Subspace(c) => {
            push_u64(&mut out, c.len() as u64);
            push_u64(&mut out, (c.d() + 1) as u64);
            for &w in c.weights() {
                push_f64(&mut out, w);
            }
            push_matrix(&mut out, c.points());
            push_str(&mut out, &meta_json(c.meta()));
        }
        Artifact::KMedian(c) => {
            push_f64(&mut out, c.epsilon());
            push_u64(&mut out, c.len() as u64);
            push_u64(&mut out, (c.d() + 1) as u64);
            for &w in c.weights() {
                push_f64(&mut out, w);
            }
            push_matrix(&mut out, c.points());
            push_str(&mut out, &kmeta_json(c.meta()));
        }
        Artifact::Augmented { matrix, report, .. } => {
            push_u64(&mut out, matrix.n() as u64);
            push_u64(&mut out, matrix.d() as u64);
            push_u64(&mut out, matrix.ell() as u64);
            out.push(matrix.exact_tail() as u8);
            push_matrix(&mut out, matrix.coeffs());
            push_matrix(&mut out, matrix.basis().basis());
            for &t in matrix.tail() {
                push_f64(&mut out, t);
            }
            push_str(&mut out, &report_json(report));
        }
    }
    push_str(&mut out, provenance);
    out
}

fn meta_json(m: &SubspaceMeta) -> String {
    serde_json::to_string(m).expect("meta serializes")
}

fn kmeta_json(m: &KMedianMeta) -> String {
    serde_json::to_string(m).expect("meta serializes")
}

fn report_json(r: &ReductionReport) -> String {
    serde_json::to_string(r).expect("report serializes")
}

fn json_of<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| parse_err(0, format!("bad {what} record: {e}")))
}

/// Decodes a binary container into the artifact and its provenance string.
pub fn decode_binary(bytes: &[u8]) -> Result<(Artifact, String)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(8)?;
    if magic != BINARY_MAGIC {
        return Err(Error::UnsupportedFormat("not a binary coresets container".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "container version {version}, this build reads {VERSION}"
        )));
    }
    let tag = r.u8()?;
    let p = r.f64()?;
    let k = r.usize()?;
    let artifact = match tag {
        TAG_SUBSPACE => {
            let s = r.usize()?;
            let width = r.usize()?;
            let mut weights = Vec::with_capacity(s);
            for _ in 0..s {
                weights.push(r.f64()?);
            }
            let points = r.matrix(s, width)?;
            let meta: SubspaceMeta = json_of(&r.string()?, "meta")?;
            Artifact::Subspace(SubspaceCoreset::from_parts(points, weights, p, k, meta)?)
        }
        TAG_KMEDIAN => {
            let epsilon = r.f64()?;
            let s = r.usize()?;
            let width = r.usize()?;
            let mut weights = Vec::with_capacity(s);
            for _ in 0..s {
                weights.push(r.f64()?);
            }
            let points = r.matrix(s, width)?;
            let meta: KMedianMeta = json_of(&r.string()?, "meta")?;
            Artifact::KMedian(WeightedCoreset::from_parts(points, weights, k, epsilon, meta)?)
        }
        TAG_AUGMENTED => {
            let n = r.usize()?;
            let d = r.usize()?;
            let ell = r.usize()?;
            let exact_tail = r.u8()? != 0;
            let coeffs = r.matrix(n, ell)?;
            let basis = r.matrix(d, ell)?;
            let mut tail = Vec::with_capacity(n);
            for _ in 0..n {
                tail.push(r.f64()?);
            }
            let report: ReductionReport = json_of(&r.string()?, "report")?;
            let matrix = AugmentedMatrix::new(coeffs, subspace_from(basis)?, tail, exact_tail)?;
            Artifact::Augmented { matrix, report, p, k }
        }
        other => {
            return Err(Error::UnsupportedFormat(format!("unknown payload tag {other}")));
        }
    };
    let provenance = r.string()?;
    r.done()?;
    Ok((artifact, provenance))
}

/// Rebuilds a subspace from stored basis columns. `Subspace::new` rejects
/// anything that lost orthonormality, so a corrupted container cannot smuggle
/// in a skewed basis.
fn subspace_from(basis: DMatrix<f64>) -> Result<Subspace> {
    if basis.ncols() == 0 {
        return Ok(Subspace::empty(basis.nrows()));
    }
    Subspace::new(basis)
}

// ---- textual container ----

/// Textual container: line-oriented key-value header, then data rows with
/// 17-significant-digit decimals. Values survive a round trip bit for bit;
/// the pinned tolerance for readers of the format is relative 1e-15.
pub fn encode_text(a: &Artifact, provenance: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("{TEXT_MAGIC} {VERSION}\n"));
    out.push_str(&format!("type {}\n", a.type_name()));
    out.push_str(&format!("p {}\n", dec(a.header_p())));
    out.push_str(&format!("k {}\n", a.header_k()));
    match a {
        Artifact::Subspace(c) => {
            out.push_str(&format!("rows {}\n", c.len()));
            out.push_str(&format!("cols {}\n", c.d() + 1));
            out.push_str(&format!("weights {}\n", join_dec(c.weights())));
            out.push_str(&format!("meta {}\n", meta_json(c.meta())));
            push_text_matrix(&mut out, "data", c.points());
        }
        Artifact::KMedian(c) => {
            out.push_str(&format!("epsilon {}\n", dec(c.epsilon())));
            out.push_str(&format!("rows {}\n", c.len()));
            out.push_str(&format!("cols {}\n", c.d() + 1));
            out.push_str(&format!("weights {}\n", join_dec(c.weights())));
            out.push_str(&format!("meta {}\n", kmeta_json(c.meta())));
            push_text_matrix(&mut out, "data", c.points());
        }
        Artifact::Augmented { matrix, report, .. } => {
            out.push_str(&format!("n {}\n", matrix.n()));
            out.push_str(&format!("d {}\n", matrix.d()));
            out.push_str(&format!("ell {}\n", matrix.ell()));
            out.push_str(&format!("exact_tail {}\n", matrix.exact_tail() as u8));
            push_text_matrix(&mut out, "coeffs", matrix.coeffs());
            push_text_matrix(&mut out, "basis", matrix.basis().basis());
            out.push_str(&format!("tail {}\n", join_dec(matrix.tail())));
            out.push_str(&format!("report {}\n", report_json(report)));
        }
    }
    out.push_str(&format!(
        "provenance {}\n",
        serde_json::to_string(provenance).expect("string serializes")
    ));
    out.push_str("end\n");
    out
}

fn join_dec(vals: &[f64]) -> String {
    vals.iter().map(|v| dec(*v)).collect::<Vec<_>>().join(" ")
}

fn push_text_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(name);
    out.push('\n');
    for i in 0..m.nrows() {
        let line: Vec<String> =
            (0..m.ncols()).map(|j| dec(m[(i, j)])).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

struct TextReader<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> TextReader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        while self.pos < self.lines.len() {
            let line = self.lines[self.pos];
            self.pos += 1;
            if !line.trim().is_empty() {
                return Ok((self.pos, line.trim()));
            }
        }
        Err(parse_err(self.lines.len(), "container ends early"))
    }

    /// A "key rest-of-line" pair; errors when the key differs.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (no, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((head, rest)) if head == key => Ok((no, rest.trim())),
            _ if line == key => Ok((no, "")),
            _ => Err(parse_err(no, format!("expected {key:?}, found {line:?}"))),
        }
    }

    fn keyed_usize(&mut self, key: &str) -> Result<usize> {
        let (no, rest) = self.keyed(key)?;
        rest.parse().map_err(|_| parse_err(no, format!("bad count {rest:?}")))
    }

    fn keyed_f64(&mut self, key: &str) -> Result<f64> {
        let (no, rest) = self.keyed(key)?;
        rest.parse().map_err(|_| parse_err(no, format!("bad decimal {rest:?}")))
    }

    fn vals(&mut self, line_no: usize, text: &str, expect: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(expect);
        for tok in text.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad decimal {tok:?}")))?;
            out.push(v);
        }
        if out.len() != expect {
            return Err(parse_err(
                line_no,
                format!("expected {} values, found {}", expect, out.len()),
            ));
        }
        Ok(out)
    }

    fn keyed_vals(&mut self, key: &str, expect: usize) -> Result<Vec<f64>> {
        let (no, rest) = self.keyed(key)?;
        self.vals(no, rest, expect)
    }

    fn matrix(&mut self, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let (no, rest) = self.keyed(key)?;
        if !rest.is_empty() {
            return Err(parse_err(no, format!("unexpected values on the {key:?} marker line")));
        }
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            let (no, line) = self.next_line()?;
            let row = self.vals(no, line, cols)?;
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }
}

/// Decodes the textual container form.
pub fn decode_text(text: &str) -> Result<(Artifact, String)> {
    let mut r = TextReader { lines: text.lines().collect(), pos: 0 };
    let (no, first) = r.next_line()?;
    let Some((magic, version)) = first.split_once(' ') else {
        return Err(Error::UnsupportedFormat("not a textual coresets container".into()));
    };
    if magic != TEXT_MAGIC {
        return Err(Error::UnsupportedFormat("not a textual coresets container".into()));
    }
    let version: u32 =
        version.trim().parse().map_err(|_| parse_err(no, "bad version number"))?;
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "container version {version}, this build reads {VERSION}"
        )));
    }
    let (no, kind) = r.keyed("type")?;
    let p = r.keyed_f64("p")?;
    let k = r.keyed_usize("k")?;
    let artifact = match kind {
        "subspace" => {
            let rows = r.keyed_usize("rows")?;
            let cols = r.keyed_usize("cols")?;
            let weights = r.keyed_vals("weights", rows)?;
            let (mno, meta_line) = r.keyed("meta")?;
            let meta: SubspaceMeta =
                serde_json::from_str(meta_line).map_err(|e| parse_err(mno, format!("{e}")))?;
            let points = r.matrix("data", rows, cols)?;
            Artifact::Subspace(SubspaceCoreset::from_parts(points, weights, p, k, meta)?)
        }
        "kmedian" => {
            let epsilon = r.keyed_f64("epsilon")?;
            let rows = r.keyed_usize("rows")?;
            let cols = r.keyed_usize("cols")?;
            let weights = r.keyed_vals("weights", rows)?;
            let (mno, meta_line) = r.keyed("meta")?;
            let meta: KMedianMeta =
                serde_json::from_str(meta_line).map_err(|e| parse_err(mno, format!("{e}")))?;
            let points = r.matrix("data", rows, cols)?;
            Artifact::KMedian(WeightedCoreset::from_parts(points, weights, k, epsilon, meta)?)
        }
        "augmented" => {
            let n = r.keyed_usize("n")?;
            let d = r.keyed_usize("d")?;
            let ell = r.keyed_usize("ell")?;
            let exact_tail = r.keyed_usize("exact_tail")? != 0;
            let coeffs = r.matrix("coeffs", n, ell)?;
            let basis = r.matrix("basis", d, ell)?;
            let tail = r.keyed_vals("tail", n)?;
            let (rno, report_line) = r.keyed("report")?;
            let report: ReductionReport =
                serde_json::from_str(report_line).map_err(|e| parse_err(rno, format!("{e}")))?;
            let matrix = AugmentedMatrix::new(coeffs, subspace_from(basis)?, tail, exact_tail)?;
            Artifact::Augmented { matrix, report, p, k }
        }
        other => {
            return Err(Error::UnsupportedFormat(format!("unknown payload type {other:?}")));
        }
    };
    let (pno, prov_line) = r.keyed("provenance")?;
    let provenance: String =
        serde_json::from_str(prov_line).map_err(|e| parse_err(pno, format!("{e}")))?;
    let (eno, end) = r.next_line()?;
    if end != "end" {
        return Err(parse_err(eno, format!("expected \"end\", found {end:?}")));
    }
    let _ = no;
    Ok((artifact, provenance))
}

// ---- file IO ----

/// Writes an artifact container; textual when `textual` is set, binary
/// otherwise.
pub fn write_artifact(
    path: &Path,
    a: &Artifact,
    provenance: &str,
    textual: bool,
) -> Result<()> {
    if textual {
        std::fs::write(path, encode_text(a, provenance))?;
    } else {
        std::fs::write(path, encode_binary(a, provenance))?;
    }
    Ok(())
}

/// Reads either container form, telling them apart by their magic.
pub fn read_artifact(path: &Path) -> Result<(Artifact, String)> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(BINARY_MAGIC) {
        return decode_binary(&bytes);
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::UnsupportedFormat("neither binary nor textual container".into()))?;
    if text.trim_start().starts_with(TEXT_MAGIC) {
        return decode_text(&text);
    }
    Err(Error::UnsupportedFormat("neither binary nor textual container".into()))
}

// ==== tests ====

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;
    use crate::dimred;
    use crate::kmedian::build_kmedian_coreset;
    use crate::subspace::{build_subspace_coreset, ReductionVariant};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_points(n: usize, d: usize, seed: u64) -> PointMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
            .collect();
        PointMatrix::from_rows(&rows).unwrap()
    }

    fn bits(m: &DMatrix<f64>) -> Vec<u64> {
        m.iter().map(|v| v.to_bits()).collect()
    }

    #[test]
    fn dense_csv_parses_the_identity() {
        let a = parse_dense_csv("1,0\n0,1\n").unwrap();
        assert_eq!((a.n(), a.d()), (2, 2));
        let mut buf = [0.0; 2];
        a.row_dense(0, &mut buf);
        assert_eq!(buf, [1.0, 0.0]);
        a.row_dense(1, &mut buf);
        assert_eq!(buf, [0.0, 1.0]);

        // Spaces around tokens and blank lines are tolerated.
        let b = parse_dense_csv("\n 1.5 , -2.0 \n\n3,4\n").unwrap();
        assert_eq!((b.n(), b.d()), (2, 2));
    }

    #[test]
    fn dense_csv_reports_bad_lines_by_number() {
        let err = parse_dense_csv("1,2\nfoo,3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = parse_dense_csv("1,2\n3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = parse_dense_csv("1,inf\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        let err = parse_dense_csv("1,NaN\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err:?}");
        assert!(parse_dense_csv("").is_err());
    }

    #[test]
    fn triplets_parse_including_the_empty_matrix() {
        let z = parse_sparse_triplets("3 4 0\n").unwrap();
        assert_eq!((z.n(), z.d(), z.nnz()), (3, 4, 0));

        let a = parse_sparse_triplets("2 2 2\n0 0 1.5\n1 1 -2.5\n").unwrap();
        let mut buf = [0.0; 2];
        a.row_dense(0, &mut buf);
        assert_eq!(buf, [1.5, 0.0]);
        a.row_dense(1, &mut buf);
        assert_eq!(buf, [0.0, -2.5]);

        let err = parse_sparse_triplets("2 2 1\n5 0 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = parse_sparse_triplets("2 2 1\n0 0 inf\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        // Fewer triplets than declared.
        let err = parse_sparse_triplets("2 2 3\n0 0 1\n1 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
        // More triplets than declared.
        let err = parse_sparse_triplets("2 2 1\n0 0 1\n1 1 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                (0..5)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut r);
                        g * 10f64.powi(r.gen_range(-12..12))
                    })
                    .collect()
            })
            .collect();
        rows.push(vec![1.0 / 3.0, -0.0, 1e-300, f64::MIN_POSITIVE, 12345.678901234567]);
        let a = PointMatrix::from_rows(&rows).unwrap();
        let back = parse_dense_csv(&write_dense_csv(&a)).unwrap();
        assert_eq!(bits(&a.to_dmatrix()), bits(&back.to_dmatrix()));

        let sparse = PointMatrix::from_triplets(
            6,
            40,
            &[(0, 0, 1.0 / 3.0), (3, 17, -2.5e-200), (5, 39, 4.0)],
        )
        .unwrap();
        assert!(sparse.is_sparse());
        let back = parse_sparse_triplets(&write_sparse_triplets(&sparse)).unwrap();
        assert_eq!(bits(&sparse.to_dmatrix()), bits(&back.to_dmatrix()));
    }

    fn sample_artifacts() -> Vec<Artifact> {
        let cfg = Config::default();
        let a = gaussian_points(60, 8, 5);
        let sub = build_subspace_coreset(&a, 2, 0.4, 1.0, ReductionVariant::Exact, 3, &cfg)
            .unwrap();
        let km = build_kmedian_coreset(&a, 2, 0.4, 4, &cfg).unwrap();
        let (m, report) = dimred::dim_reduce_exact(&a, 2, 0.4, 1.5, 6, &cfg).unwrap();
        vec![
            Artifact::Subspace(sub),
            Artifact::KMedian(km),
            Artifact::Augmented { matrix: m, report, p: 1.5, k: 2 },
        ]
    }

    fn assert_artifacts_match(a: &Artifact, b: &Artifact, bitwise: bool) {
        let close = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
            assert_eq!(x.shape(), y.shape());
            if bitwise {
                assert_eq!(bits(x), bits(y));
            } else {
                for (u, v) in x.iter().zip(y.iter()) {
                    assert!((u - v).abs() <= 1e-15 * u.abs().max(1e-300));
                }
            }
        };
        match (a, b) {
            (Artifact::Subspace(x), Artifact::Subspace(y)) => {
                close(x.points(), y.points());
                assert_eq!(x.weights().len(), y.weights().len());
                for (u, v) in x.weights().iter().zip(y.weights()) {
                    if bitwise {
                        assert_eq!(u.to_bits(), v.to_bits());
                    } else {
                        assert!((u - v).abs() <= 1e-15 * u.abs());
                    }
                }
                assert_eq!((x.p(), x.k()), (y.p(), y.k()));
                assert_eq!(x.meta().sampling_seed, y.meta().sampling_seed);
                assert_eq!(x.meta().attempts, y.meta().attempts);
                assert_eq!(x.meta().validation_err.to_bits(), y.meta().validation_err.to_bits());
            }
            (Artifact::KMedian(x), Artifact::KMedian(y)) => {
                close(x.points(), y.points());
                assert_eq!((x.k(), x.epsilon()), (y.k(), y.epsilon()));
                assert_eq!(x.meta().input_rows, y.meta().input_rows);
                assert_eq!(x.meta().weight_sum.to_bits(), y.meta().weight_sum.to_bits());
            }
            (
                Artifact::Augmented { matrix: x, report: rx, p: px, k: kx },
                Artifact::Augmented { matrix: y, report: ry, p: py, k: ky },
            ) => {
                close(x.coeffs(), y.coeffs());
                close(x.basis().basis(), y.basis().basis());
                assert_eq!(x.exact_tail(), y.exact_tail());
                assert_eq!((px, kx), (py, ky));
                assert_eq!(rx.iterations, ry.iterations);
                assert_eq!(rx.seed, ry.seed);
                for (u, v) in x.tail().iter().zip(y.tail()) {
                    if bitwise {
                        assert_eq!(u.to_bits(), v.to_bits());
                    } else {
                        assert!((u - v).abs() <= 1e-15 * u.abs().max(1e-300));
                    }
                }
            }
            _ => panic!("artifact type changed in the round trip"),
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        for a in sample_artifacts() {
            let bytes = encode_binary(&a, "prov");
            let (back, prov) = decode_binary(&bytes).unwrap();
            assert_eq!(prov, "prov");
            assert_artifacts_match(&a, &back, true);
            // Re-encoding the decoded artifact reproduces the bytes.
            assert_eq!(bytes, encode_binary(&back, &prov));
        }
    }

    #[test]
    fn text_round_trip_stays_within_1e15() {
        for a in sample_artifacts() {
            let text = encode_text(&a, "prov");
            let (back, prov) = decode_text(&text).unwrap();
            assert_eq!(prov, "prov");
            assert_artifacts_match(&a, &back, false);
        }
    }

    #[test]
    fn provenance_survives_awkward_content() {
        let art = &sample_artifacts()[0];
        let prov = "line one\nline two\ttabbed \"quoted\" unicode: Δε=0.25";
        let (_, p1) = decode_binary(&encode_binary(art, prov)).unwrap();
        assert_eq!(p1, prov);
        let (_, p2) = decode_text(&encode_text(art, prov)).unwrap();
        assert_eq!(p2, prov);
    }

    #[test]
    fn version_and_magic_are_enforced() {
        let art = &sample_artifacts()[0];
        let mut bytes = encode_binary(art, "");
        bytes[8] = 9;
        assert!(matches!(decode_binary(&bytes).unwrap_err(), Error::UnsupportedFormat(_)));

        let mut wrong_magic = encode_binary(art, "");
        wrong_magic[0] = b'X';
        assert!(matches!(
            decode_binary(&wrong_magic).unwrap_err(),
            Error::UnsupportedFormat(_)
        ));

        let mut bad_tag = encode_binary(art, "");
        bad_tag[12] = 77;
        assert!(matches!(decode_binary(&bad_tag).unwrap_err(), Error::UnsupportedFormat(_)));

        let text = encode_text(art, "");
        let future = text.replacen("coresets-container 1", "coresets-container 2", 1);
        assert!(matches!(decode_text(&future).unwrap_err(), Error::UnsupportedFormat(_)));
        assert!(decode_text("something else\n").is_err());
    }

    #[test]
    fn truncation_is_detected_not_panicked() {
        let art = &sample_artifacts()[1];
        let bytes = encode_binary(art, "config goes here");
        for cut in [0, 4, 8, 13, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_binary(&bytes[..cut]).is_err(), "cut at {cut} must fail");
        }
        // Trailing garbage is rejected too.
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(decode_binary(&padded).is_err());

        let text = encode_text(art, "config");
        let lines: Vec<&str> = text.lines().collect();
        let partial = lines[..lines.len() / 2].join("\n");
        assert!(decode_text(&partial).is_err());
        let no_end = text.replace("\nend\n", "\n");
        assert!(decode_text(&no_end).is_err());
    }

    #[test]
    fn files_round_trip_with_magic_sniffing() {
        let dir = tempfile::tempdir().unwrap();
        for (i, a) in sample_artifacts().iter().enumerate() {
            for textual in [false, true] {
                let path = dir.path().join(format!("artifact_{i}_{textual}"));
                write_artifact(&path, a, "cfg", textual).unwrap();
                let (back, prov) = read_artifact(&path).unwrap();
                assert_eq!(prov, "cfg");
                assert_artifacts_match(a, &back, !textual);
            }
        }
        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not a container").unwrap();
        assert!(matches!(read_artifact(&junk).unwrap_err(), Error::UnsupportedFormat(_)));
    }

    #[test]
    fn format_names_parse() {
        assert_eq!("dense-csv".parse::<InputFormat>().unwrap(), InputFormat::DenseCsv);
        assert_eq!(
            "sparse-triplets".parse::<InputFormat>().unwrap(),
            InputFormat::SparseTriplets
        );
        assert!("yaml".parse::<InputFormat>().is_err());
    }
}
