//! File formats: whitespace text for points and queries, a sectioned binary
//! file for the index, and the space report.
//!
//! Index file layout (all little-endian):
//!
//! ```text
//! magic "RMXI" | version u32 | endian u8 (0 = little) | pad [u8; 3]
//! section count u32
//! per section: name [u8; 8] | offset u64 | byte length u64 | fnv1a-64 u64
//! section bytes, concatenated in table order
//! ```
//!
//! Sections: `config`, `globals` (arrays and level bit vectors, plus the
//! padded priorities), `tree` (node headers and leaf points), `matrix`
//! (per-square maxima), `twoside` (region payload bit-strings). Identical
//! input always produces byte-identical files; checksums are validated on
//! load.

use crate::globals::Globals;
use crate::points::{Coord, PointSet, QueryRect, OPEN_HI, OPEN_LO};
use crate::tree::{BuildConfig, Node, RangeMaxIndex, TreeSpace};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"RMXI";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: expected {want} fields, found {got}")]
    FieldCount { line: usize, want: usize, got: usize },
    #[error("points file declares {want} points but has {got} data lines")]
    PointCount { want: usize, got: usize },
    #[error("column {0} is not a permutation of 0..n")]
    NotAPermutation(&'static str),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("file truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("checksum mismatch in section {0}")]
    Checksum(String),
    #[error("missing section {0}")]
    MissingSection(String),
    #[error("malformed section {0}")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// text formats
// ---------------------------------------------------------------------------

/// Parses a points file: a count line, then `x y priority` per line. Every
/// column must be a permutation of `0..n`.
pub fn parse_points(text: &str) -> Result<PointSet, FormatError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (line0, head) = lines.next().ok_or(FormatError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let n: usize = head.trim().parse().map_err(|_| FormatError::Parse {
        line: line0 + 1,
        msg: format!("bad point count {head:?}"),
    })?;
    // every data line needs several bytes, so a count beyond the input
    // length is malformed; this also bounds allocation on hostile input
    if n == 0 || n > text.len() {
        return Err(FormatError::Parse { line: line0 + 1, msg: format!("unusable point count {n}") });
    }
    let mut xs = vec![u32::MAX; n];
    let mut upsilon = vec![u32::MAX; n];
    let mut pi = vec![u32::MAX; n];
    let mut got = 0usize;
    for (i, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(FormatError::FieldCount { line: i + 1, want: 3, got: fields.len() });
        }
        let mut vals = [0u32; 3];
        for (t, f) in fields.iter().enumerate() {
            vals[t] = f.parse().map_err(|_| FormatError::Parse {
                line: i + 1,
                msg: format!("bad integer {f:?}"),
            })?;
            if vals[t] as usize >= n {
                return Err(FormatError::Parse {
                    line: i + 1,
                    msg: format!("value {} out of range 0..{n}", vals[t]),
                });
            }
        }
        let [x, y, p] = vals;
        if xs[x as usize] != u32::MAX {
            return Err(FormatError::Parse { line: i + 1, msg: format!("duplicate x {x}") });
        }
        xs[x as usize] = x;
        upsilon[x as usize] = y;
        pi[x as usize] = p;
        got += 1;
        if got > n {
            break;
        }
    }
    if got != n {
        return Err(FormatError::PointCount { want: n, got });
    }
    PointSet::new(upsilon, pi).map_err(|e| match e {
        crate::points::PointError::NotAPermutation(col, _) => FormatError::NotAPermutation(col),
        other => FormatError::Parse { line: 0, msg: other.to_string() },
    })
}

pub fn write_points(ps: &PointSet) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n", ps.len()));
    for (x, y, p) in ps.iter() {
        out.push_str(&format!("{x} {y} {p}\n"));
    }
    out
}

/// Parses a queries file: `x1 y1 x2 y2` per line, inclusive bounds, `*` for
/// an open side. x1/y1 are the low bounds.
pub fn parse_queries(text: &str) -> Result<Vec<QueryRect>, FormatError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(FormatError::FieldCount { line: i + 1, want: 4, got: fields.len() });
        }
        let parse = |f: &str, low: bool| -> Result<i64, FormatError> {
            if f == "*" {
                return Ok(if low { OPEN_LO } else { OPEN_HI });
            }
            let v: u32 = f.parse().map_err(|_| FormatError::Parse {
                line: i + 1,
                msg: format!("bad bound {f:?}"),
            })?;
            Ok(v as i64)
        };
        let x_lo = parse(fields[0], true)?;
        let y_lo = parse(fields[1], true)?;
        let x_hi = parse(fields[2], false)?;
        let y_hi = parse(fields[3], false)?;
        if x_lo > x_hi || y_lo > y_hi {
            return Err(FormatError::Parse {
                line: i + 1,
                msg: "bounds out of order".into(),
            });
        }
        out.push(QueryRect { x_lo, x_hi, y_lo, y_hi });
    }
    Ok(out)
}

pub fn format_answer(ans: Option<crate::points::Candidate>) -> String {
    match ans {
        Some(c) => format!("{} {} {}", c.x, c.y, c.priority),
        None => "NONE".to_string(),
    }
}

// ---------------------------------------------------------------------------
// index file
// ---------------------------------------------------------------------------

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

struct SectionWriter {
    names: Vec<[u8; 8]>,
    payloads: Vec<Vec<u8>>,
}

impl SectionWriter {
    fn new() -> Self {
        SectionWriter { names: Vec::new(), payloads: Vec::new() }
    }

    fn add(&mut self, name: &str, payload: Vec<u8>) {
        let mut n = [0u8; 8];
        n[..name.len()].copy_from_slice(name.as_bytes());
        self.names.push(n);
        self.payloads.push(payload);
    }

    fn finish(self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(0); // little-endian
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&(self.names.len() as u32).to_le_bytes());
        let table_at = out.len();
        let entry = 8 + 8 + 8 + 8;
        let mut offset = (table_at + entry * self.names.len()) as u64;
        for (name, payload) in self.names.iter().zip(&self.payloads) {
            out.extend_from_slice(name);
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&fnv1a64(payload).to_le_bytes());
            offset += payload.len() as u64;
        }
        for payload in self.payloads {
            out.extend_from_slice(&payload);
        }
        out
    }
}

/// Parsed section table over a borrowed file image.
pub struct IndexFile<'a> {
    bytes: &'a [u8],
    sections: Vec<(String, usize, usize)>,
}

impl<'a> IndexFile<'a> {
    pub fn parse(bytes: &'a [u8]) -> Result<Self, FormatError> {
        if bytes.len() < 12 {
            return Err(FormatError::Truncated { need: 12, have: bytes.len() });
        }
        if bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::BadVersion(version));
        }
        if bytes[8] != 0 {
            return Err(FormatError::Malformed("endianness flag".into()));
        }
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if count > 64 {
            return Err(FormatError::Malformed("section count".into()));
        }
        let entry = 32;
        let table_end = 16 + entry * count;
        if bytes.len() < table_end {
            return Err(FormatError::Truncated { need: table_end, have: bytes.len() });
        }
        let mut sections = Vec::with_capacity(count);
        for i in 0..count {
            let at = 16 + i * entry;
            let name_raw = &bytes[at..at + 8];
            let name = String::from_utf8_lossy(name_raw)
                .trim_end_matches('\0')
                .to_string();
            let offset = u64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap()) as usize;
            let len = u64::from_le_bytes(bytes[at + 16..at + 24].try_into().unwrap()) as usize;
            let sum = u64::from_le_bytes(bytes[at + 24..at + 32].try_into().unwrap());
            let end = offset.checked_add(len).ok_or(FormatError::Malformed(name.clone()))?;
            if end > bytes.len() {
                return Err(FormatError::Truncated { need: end, have: bytes.len() });
            }
            if fnv1a64(&bytes[offset..end]) != sum {
                return Err(FormatError::Checksum(name));
            }
            sections.push((name, offset, len));
        }
        Ok(IndexFile { bytes, sections })
    }

    pub fn section(&self, name: &str) -> Result<&'a [u8], FormatError> {
        self.sections
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|&(_, off, len)| &self.bytes[off..off + len])
            .ok_or_else(|| FormatError::MissingSection(name.to_string()))
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, usize)> + '_ {
        self.sections.iter().map(|(n, _, len)| (n.as_str(), *len))
    }

    /// Header plus table bytes, everything not inside a section.
    pub fn framing_bytes(&self) -> usize {
        16 + 32 * self.sections.len()
    }
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_u64(bytes: &[u8], at: &mut usize) -> Result<u64, FormatError> {
    let v = bytes
        .get(*at..*at + 8)
        .map(|s| u64::from_le_bytes(s.try_into().unwrap()))
        .ok_or(FormatError::Truncated { need: *at + 8, have: bytes.len() })?;
    *at += 8;
    Ok(v)
}

/// Serializes a built index into the sectioned file format.
pub fn save_index(idx: &RangeMaxIndex) -> Vec<u8> {
    let mut w = SectionWriter::new();
    let cfg = idx.config();

    let mut config = Vec::new();
    push_u64(&mut config, cfg.n_original as u64);
    push_u64(&mut config, cfg.n_padded as u64);
    push_u64(&mut config, cfg.base_threshold as u64);
    config.extend_from_slice(
        &cfg.lambda_override.map_or(-1i64, |v| v as i64).to_le_bytes(),
    );
    w.add("config", config);

    let mut globals = Vec::new();
    idx.globals().to_bytes(&mut globals);
    for &p in idx.padded_pi() {
        globals.extend_from_slice(&p.to_le_bytes());
    }
    w.add("globals", globals);

    let (mut tree, mut matrices, mut two) = (Vec::new(), Vec::new(), Vec::new());
    idx.root().write(&mut tree, &mut matrices, &mut two);
    w.add("tree", tree);
    w.add("matrix", matrices);
    w.add("twoside", two);
    w.finish()
}

/// Loads an index file, validating checksums and structure.
pub fn load_index(bytes: &[u8]) -> Result<RangeMaxIndex, FormatError> {
    let file = IndexFile::parse(bytes)?;
    let config = file.section("config")?;
    let mut at = 0;
    let n_original = read_u64(config, &mut at)? as usize;
    let n_padded = read_u64(config, &mut at)? as usize;
    let base_threshold = read_u64(config, &mut at)? as usize;
    let lambda_raw = read_u64(config, &mut at)? as i64;
    if n_original == 0 || !n_padded.is_power_of_two() || n_padded < n_original {
        return Err(FormatError::Malformed("config".into()));
    }
    let cfg = BuildConfig {
        n_original,
        n_padded,
        base_threshold,
        lambda_override: if lambda_raw < 0 { None } else { Some(lambda_raw as usize) },
    };

    let gbytes = file.section("globals")?;
    let (globals, used) =
        Globals::from_bytes(gbytes).map_err(|e| FormatError::Malformed(format!("globals: {e}")))?;
    if globals.n() != n_padded {
        return Err(FormatError::Malformed("globals size".into()));
    }
    if gbytes.len() != used + 4 * n_padded {
        return Err(FormatError::Malformed("globals length".into()));
    }
    let mut pi: Vec<Coord> = Vec::with_capacity(n_padded);
    let mut at = used;
    for _ in 0..n_padded {
        let v = gbytes
            .get(at..at + 4)
            .map(|s| u32::from_le_bytes(s.try_into().unwrap()))
            .ok_or(FormatError::Truncated { need: at + 4, have: gbytes.len() })?;
        if v as usize >= n_padded {
            return Err(FormatError::Malformed("priority out of range".into()));
        }
        pi.push(v);
        at += 4;
    }
    if at != gbytes.len() {
        return Err(FormatError::Malformed("globals trailing bytes".into()));
    }

    let tree = file.section("tree")?;
    let matrices = file.section("matrix")?;
    let two = file.section("twoside")?;
    let (mut a, mut b, mut c) = (0usize, 0usize, 0usize);
    let root = Node::read(tree, matrices, two, &mut a, &mut b, &mut c)
        .map_err(|e| FormatError::Malformed(format!("tree: {e}")))?;
    if a != tree.len() || b != matrices.len() || c != two.len() {
        return Err(FormatError::Malformed("trailing section bytes".into()));
    }
    if root.header().n != n_padded {
        return Err(FormatError::Malformed("root size".into()));
    }
    Ok(RangeMaxIndex::from_parts(cfg, globals, pi, root))
}

// ---------------------------------------------------------------------------
// space report
// ---------------------------------------------------------------------------

/// One line of the report: a component with its exact bit count.
#[derive(Debug, Clone)]
pub struct SpaceRow {
    pub component: String,
    pub bits: u64,
}

/// One boolean bound check.
#[derive(Debug, Clone)]
pub struct SpaceCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SpaceReport {
    pub rows: Vec<SpaceRow>,
    pub checks: Vec<SpaceCheck>,
    /// (section name, byte length) as stored in the file.
    pub sections: Vec<(String, u64)>,
    pub file_bytes: u64,
    pub framing_bytes: u64,
}

impl SpaceReport {
    /// Builds the report from an index and its serialized image.
    pub fn new(idx: &RangeMaxIndex, file_bytes: &[u8]) -> Result<SpaceReport, FormatError> {
        let file = IndexFile::parse(file_bytes)?;
        let space: TreeSpace = idx.space();
        let n = idx.config().n_padded as u64;

        let mut rows = Vec::new();
        let section_len = |name: &str| -> u64 {
            file.section(name).map(|s| s.len() as u64).unwrap_or(0)
        };
        rows.push(SpaceRow { component: "config".into(), bits: 8 * section_len("config") });
        rows.push(SpaceRow { component: "globals".into(), bits: 8 * section_len("globals") });
        rows.push(SpaceRow { component: "tree_nodes".into(), bits: 8 * section_len("tree") });
        rows.push(SpaceRow { component: "matrices".into(), bits: 8 * section_len("matrix") });
        rows.push(SpaceRow {
            component: "two_sided_sections".into(),
            bits: 8 * section_len("twoside"),
        });
        rows.push(SpaceRow {
            component: "leaves".into(),
            bits: 8 * idx.root().leaf_bytes() as u64,
        });
        let mut p = [0u64; 6]; // payload bits 1..5 plus skeleton words
        for t in &space.two_sided {
            p[0] += t.p1_bits as u64;
            p[1] += t.p2_bits as u64;
            p[2] += t.p3_bits as u64;
            p[3] += t.p4_bits() as u64;
            p[4] += t.p5_bits as u64;
            p[5] += t.skeleton_words as u64;
        }
        for (i, name) in ["payload1", "payload2", "payload3", "payload4", "payload5"]
            .iter()
            .enumerate()
        {
            rows.push(SpaceRow { component: (*name).into(), bits: p[i] });
        }
        rows.push(SpaceRow { component: "skeleton_words_x64".into(), bits: p[5] * 64 });
        rows.push(SpaceRow {
            component: "globals_structure".into(),
            bits: idx.globals().structure_bits() as u64,
        });

        let mut checks = Vec::new();
        let code = crate::influence::encode_priorities(&pad_view(idx));
        checks.push(SpaceCheck {
            name: "entropy_code_le_3n".into(),
            pass: code.bit_len() as u64 <= 3 * n,
            detail: format!("{} <= {}", code.bit_len(), 3 * n),
        });
        let mut payload135_ok = true;
        let mut weight_ok = true;
        for t in &space.two_sided {
            payload135_ok &= t.p1_bits + t.p3_bits + t.p5_bits <= 8 * t.n;
            let cap = 4 * t.lambda;
            weight_ok &= t.max_region_points <= cap && t.max_region_parts <= cap;
            weight_ok &= t.selected <= (4 * t.n).div_ceil(t.lambda).max(4);
        }
        checks.push(SpaceCheck {
            name: "payload_1_3_5_le_8n".into(),
            pass: payload135_ok,
            detail: format!("{} structures", space.two_sided.len()),
        });
        checks.push(SpaceCheck {
            name: "region_weight_le_4lambda".into(),
            pass: weight_ok,
            detail: format!("{} structures", space.two_sided.len()),
        });
        // sections plus framing account for every file byte
        let sections: Vec<(String, u64)> =
            file.sections().map(|(nm, len)| (nm.to_string(), len as u64)).collect();
        let framing = file.framing_bytes() as u64;
        let total: u64 = sections.iter().map(|(_, l)| l).sum::<u64>() + framing;
        checks.push(SpaceCheck {
            name: "sections_sum_to_file_size".into(),
            pass: total == file_bytes.len() as u64,
            detail: format!("{total} == {}", file_bytes.len()),
        });
        Ok(SpaceReport {
            rows,
            checks,
            sections,
            file_bytes: file_bytes.len() as u64,
            framing_bytes: framing,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,name,value,detail\n");
        for (name, len) in &self.sections {
            out.push_str(&format!("section,{name},{len},bytes\n"));
        }
        out.push_str(&format!("section,framing,{},bytes\n", self.framing_bytes));
        out.push_str(&format!("section,total,{},bytes\n", self.file_bytes));
        for row in &self.rows {
            out.push_str(&format!("component,{},{},bits\n", row.component, row.bits));
        }
        for c in &self.checks {
            out.push_str(&format!("check,{},{},{}\n", c.name, c.pass, c.detail));
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (name, len) in &self.sections {
            out.push_str(&format!(
                "{{\"kind\":\"section\",\"name\":\"{name}\",\"bytes\":{len}}}\n"
            ));
        }
        out.push_str(&format!(
            "{{\"kind\":\"section\",\"name\":\"framing\",\"bytes\":{}}}\n",
            self.framing_bytes
        ));
        out.push_str(&format!(
            "{{\"kind\":\"section\",\"name\":\"total\",\"bytes\":{}}}\n",
            self.file_bytes
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{{\"kind\":\"component\",\"name\":\"{}\",\"bits\":{}}}\n",
                row.component, row.bits
            ));
        }
        for c in &self.checks {
            out.push_str(&format!(
                "{{\"kind\":\"check\",\"name\":\"{}\",\"pass\":{},\"detail\":\"{}\"}}\n",
                c.name, c.pass, c.detail
            ));
        }
        out
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// The padded instance as a point set, for report-level bound checks.
fn pad_view(idx: &RangeMaxIndex) -> PointSet {
    let g = idx.globals();
    PointSet::new(g.x_array().to_vec(), idx.padded_pi().to_vec()).expect("stored permutations")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::{brute_force_max, Candidate};
    use crate::testutil::{p5, random_point_set};
    use crate::tree::BuildConfig;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn points_text_roundtrip() {
        let ps = p5();
        let text = write_points(&ps);
        assert_eq!(text.lines().next(), Some("5"));
        let back = parse_points(&text).unwrap();
        assert_eq!(back, ps);
    }

    #[test]
    fn points_text_diagnostics() {
        assert!(matches!(parse_points(""), Err(FormatError::Parse { .. })));
        assert!(matches!(
            parse_points("2\n0 0 0\n1 1"),
            Err(FormatError::FieldCount { line: 3, want: 3, got: 2 })
        ));
        assert!(matches!(
            parse_points("2\n0 0 0\n"),
            Err(FormatError::PointCount { want: 2, got: 1 })
        ));
        assert!(matches!(
            parse_points("2\n0 0 0\n0 1 1"),
            Err(FormatError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_points("2\n0 0 0\n1 5 1"),
            Err(FormatError::Parse { line: 3, .. })
        ));
        // y column repeats a value
        assert!(parse_points("2\n0 0 0\n1 0 1").is_err());
    }

    #[test]
    fn queries_text_examples() {
        let qs = parse_queries("0 0 2 2\n* * * *\n3 * 4 *\n").unwrap();
        assert_eq!(qs[0], QueryRect::closed(0, 2, 0, 2));
        assert_eq!(qs[1], QueryRect::full());
        // "3 * 4 *": x in [3, 4], y open on both sides
        assert_eq!(qs[2], QueryRect::new(Some(3), Some(4), None, None));
        assert!(parse_queries("1 1 0 1\n").is_err());
        assert!(parse_queries("1 1 2\n").is_err());
        assert!(parse_queries("a 1 2 3\n").is_err());
    }

    #[test]
    fn answer_lines() {
        assert_eq!(format_answer(Some(Candidate { x: 2, y: 1, priority: 4 })), "2 1 4");
        assert_eq!(format_answer(None), "NONE");
    }

    #[test]
    fn index_file_roundtrip_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for &n in &[5usize, 64, 200] {
            let ps = random_point_set(n, &mut rng);
            let idx = RangeMaxIndex::build(&ps, BuildConfig::new(n));
            let bytes = save_index(&idx);
            let again = save_index(&RangeMaxIndex::build(&ps, BuildConfig::new(n)));
            assert_eq!(bytes, again, "two builds of the same input differ");
            let loaded = load_index(&bytes).unwrap();
            for _ in 0..300 {
                let x_lo = rng.random_range(0..n as u32);
                let x_hi = rng.random_range(x_lo..n as u32);
                let y_lo = rng.random_range(0..n as u32);
                let y_hi = rng.random_range(y_lo..n as u32);
                let rect = QueryRect::closed(x_lo, x_hi, y_lo, y_hi);
                assert_eq!(loaded.query(&rect), idx.query(&rect));
                assert_eq!(loaded.query(&rect), brute_force_max(&ps, &rect));
            }
        }
    }

    #[test]
    fn index_file_rejects_corruption() {
        let ps = p5();
        let idx = RangeMaxIndex::build(&ps, BuildConfig::new(5));
        let bytes = save_index(&idx);
        assert!(matches!(load_index(&bytes[..10]), Err(FormatError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(load_index(&bad), Err(FormatError::BadMagic)));
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0xff;
        assert!(matches!(load_index(&bad), Err(FormatError::Checksum(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(load_index(&bad), Err(FormatError::BadVersion(_))));
    }

    #[test]
    fn space_report_reconciles() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let ps = random_point_set(300, &mut rng);
        let idx = RangeMaxIndex::build(&ps, BuildConfig::new(300));
        let bytes = save_index(&idx);
        let report = SpaceReport::new(&idx, &bytes).unwrap();
        assert!(report.all_checks_pass(), "{:?}", report.checks);
        let csv = report.to_csv();
        assert!(csv.contains("sections_sum_to_file_size,true"));
        assert!(csv.contains("entropy_code_le_3n,true"));
        let jsonl = report.to_jsonl();
        assert!(jsonl.lines().count() >= report.rows.len());
        // section byte sums plus framing equal the file exactly
        let total: u64 = report.sections.iter().map(|(_, l)| *l).sum::<u64>()
            + report.framing_bytes;
        assert_eq!(total, report.file_bytes);
    }
}
