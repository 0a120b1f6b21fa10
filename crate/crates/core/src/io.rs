//! On-disk formats.
//!
//! Binary containers share one layout: a 4-byte magic, little-endian `u32`
//! header fields, then little-endian IEEE-754 `f32` payloads in row-major
//! order. Values are widened to `f64` on read, which is exact, so
//! write-then-read is a bit-exact round trip at `f32` precision.
//!
//! | magic  | header          | payload                                   |
//! |--------|-----------------|-------------------------------------------|
//! | `NCD1` | `n`, `d`        | `n·d` descriptor values                   |
//! | `NCP1` | `d`, `D`        | mean `[d]`, eigvals `[D]`, components `[D·d]` |
//! | `NCW1` | `d_in`, `D`     | `W [D·d_in]`                              |
//!
//! Descriptor ids live in a UTF-8 sidecar file, one id per line.
//!
//! Nothing here locks files: concurrent readers are fine, concurrent writers
//! to the same path are not.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::descriptor::DescriptorSet;
use crate::error::{Error, Result};
use crate::fmt::format_g;
use crate::pairs::{MatchGraph, Pair, PairLabel, PairSet};
use crate::pca::PcaModel;
use crate::projection::{ProjectionModel, TrainConfig};
use crate::truth::{GroundTruth, GroupTruth, RankedTruth, Relevance, TruthFormat};

pub const NCD_MAGIC: [u8; 4] = *b"NCD1";
pub const NCP_MAGIC: [u8; 4] = *b"NCP1";
pub const NCW_MAGIC: [u8; 4] = *b"NCW1";

/// Orthonormality tolerance for components read back from `f32` storage.
pub const STORED_ORTHO_TOL: f64 = 1e-4;

const HEADER_LEN: u64 = 12;

/// Default sidecar path for a descriptor file: same stem, `.ids` extension.
pub fn ids_path_for(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

struct Header {
    a: u32,
    b: u32,
}

fn read_header(bytes: &[u8], magic: [u8; 4]) -> Result<Header> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(Error::BadMagic {
            expected: magic,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if (bytes.len() as u64) < HEADER_LEN {
        return Err(Error::SizeMismatch {
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    let a = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let b = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    Ok(Header { a, b })
}

/// Checks the file length against the number of `f32` payload values.
fn check_payload(bytes: &[u8], values: Option<u64>) -> Result<()> {
    let expected = values
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(HEADER_LEN))
        .unwrap_or(u64::MAX);
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

fn decode_f32s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect()
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    for &v in values {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Validation(format!(
                "value {v} is not representable as a 32-bit float"
            )));
        }
        buf.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

fn header_bytes(magic: [u8; 4], a: usize, b: usize) -> Result<Vec<u8>> {
    let a = u32::try_from(a).map_err(|_| Error::Validation(format!("{a} exceeds u32")))?;
    let b = u32::try_from(b).map_err(|_| Error::Validation(format!("{b} exceeds u32")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&magic);
    buf.extend_from_slice(&a.to_le_bytes());
    buf.extend_from_slice(&b.to_le_bytes());
    Ok(buf)
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::Validation(format!(
            "id {id:?} must be non-empty and free of tabs and newlines"
        )));
    }
    Ok(())
}

/// Parses the ids sidecar. Every line must be non-empty; a single trailing
/// newline is allowed.
pub fn parse_ids(text: &str) -> Result<Vec<String>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                Err(Error::parse(i + 1, "empty id line"))
            } else {
                Ok(line.to_string())
            }
        })
        .collect()
}

pub fn encode_ncd(set: &DescriptorSet) -> Result<Vec<u8>> {
    let mut buf = header_bytes(NCD_MAGIC, set.len(), set.dim())?;
    buf.reserve(set.data().len() * 4);
    push_f32s(&mut buf, set.data())?;
    Ok(buf)
}

pub fn encode_ids(ids: &[String]) -> Result<String> {
    let mut out = String::new();
    for id in ids {
        check_id(id)?;
        out.push_str(id);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_ncd(bytes: &[u8], ids_text: &str) -> Result<DescriptorSet> {
    let Header { a: n, b: d } = read_header(bytes, NCD_MAGIC)?;
    check_payload(bytes, (n as u64).checked_mul(d as u64))?;
    if n == 0 || d == 0 {
        return Err(Error::Validation(format!(
            "descriptor file must have n >= 1 and d >= 1 (n={n}, d={d})"
        )));
    }
    let ids = parse_ids(ids_text)?;
    if ids.len() != n as usize {
        return Err(Error::IdCountMismatch {
            expected: n as usize,
            actual: ids.len(),
        });
    }
    let data = decode_f32s(&bytes[HEADER_LEN as usize..]);
    DescriptorSet::new(ids, data, d as usize)
}

pub fn read_ncd(path: &Path, ids_path: &Path) -> Result<DescriptorSet> {
    let bytes = fs::read(path)?;
    let ids = fs::read(ids_path)?;
    let ids = String::from_utf8(ids).map_err(|e| Error::parse(0, format!("ids file: {e}")))?;
    decode_ncd(&bytes, &ids)
}

pub fn write_ncd(set: &DescriptorSet, path: &Path, ids_path: &Path) -> Result<()> {
    let bytes = encode_ncd(set)?;
    let ids = encode_ids(set.ids())?;
    fs::write(path, bytes)?;
    fs::write(ids_path, ids)?;
    Ok(())
}

pub fn encode_pca(model: &PcaModel) -> Result<Vec<u8>> {
    let mut buf = header_bytes(NCP_MAGIC, model.input_dim(), model.output_dim())?;
    push_f32s(&mut buf, model.mean())?;
    push_f32s(&mut buf, model.eigvals())?;
    push_f32s(&mut buf, model.components())?;
    Ok(buf)
}

pub fn decode_pca(bytes: &[u8]) -> Result<PcaModel> {
    let Header { a: d, b: big_d } = read_header(bytes, NCP_MAGIC)?;
    let (d, big_d) = (d as u64, big_d as u64);
    let values = big_d
        .checked_mul(d)
        .and_then(|c| c.checked_add(d + big_d));
    check_payload(bytes, values)?;
    let all = decode_f32s(&bytes[HEADER_LEN as usize..]);
    let (mean, rest) = all.split_at(d as usize);
    let (eigvals, components) = rest.split_at(big_d as usize);
    PcaModel::from_parts(
        mean.to_vec(),
        eigvals.to_vec(),
        components.to_vec(),
        STORED_ORTHO_TOL,
    )
}

pub fn write_pca(model: &PcaModel, path: &Path) -> Result<()> {
    fs::write(path, encode_pca(model)?)?;
    Ok(())
}

pub fn read_pca(path: &Path) -> Result<PcaModel> {
    decode_pca(&fs::read(path)?)
}

/// Encodes only the `W` matrix of a projection model.
pub fn encode_ncw(model: &ProjectionModel) -> Result<Vec<u8>> {
    let mut buf = header_bytes(NCW_MAGIC, model.input_dim(), model.output_dim())?;
    push_f32s(&mut buf, model.weights())?;
    Ok(buf)
}

/// Decodes a bare `W` matrix as `(d_in, D, values)`.
pub fn decode_ncw(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let Header { a: d_in, b: big_d } = read_header(bytes, NCW_MAGIC)?;
    check_payload(bytes, (d_in as u64).checked_mul(big_d as u64))?;
    if big_d == 0 || big_d > d_in {
        return Err(Error::Validation(format!(
            "projection must satisfy 1 <= D <= d_in (D={big_d}, d_in={d_in})"
        )));
    }
    let w = decode_f32s(&bytes[HEADER_LEN as usize..]);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { id: None });
    }
    Ok((d_in as usize, big_d as usize, w))
}

/// Manifest path written next to an `NCW1` file.
pub fn manifest_path_for(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".manifest.tsv");
    PathBuf::from(name)
}

fn pre_pca_path_for(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".pre.ncp");
    PathBuf::from(name)
}

/// Writes `W` to `path`, a `key\tvalue` manifest next to it, and the PCA
/// pre-stage (if any) as an `NCP1` file referenced from the manifest.
pub fn write_projection(model: &ProjectionModel, path: &Path) -> Result<()> {
    fs::write(path, encode_ncw(model)?)?;
    let mut manifest = String::new();
    manifest.push_str(&format!("format\tNCW1\nd_in\t{}\nD\t{}\n", model.input_dim(), model.output_dim()));
    if let Some(pre) = model.pre_pca() {
        let pre_path = pre_pca_path_for(path);
        write_pca(pre, &pre_path)?;
        let name = pre_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        manifest.push_str(&format!("pre_pca\t{name}\n"));
    }
    if let Some(cfg) = model.config() {
        for (k, v) in cfg.to_pairs() {
            manifest.push_str(&format!("{k}\t{v}\n"));
        }
    }
    fs::write(manifest_path_for(path), manifest)?;
    Ok(())
}

/// Reads a projection model. The manifest is optional; without it the model
/// is a bare `W` with no pre-stage.
pub fn read_projection(path: &Path) -> Result<ProjectionModel> {
    let (d_in, d_out, w) = decode_ncw(&fs::read(path)?)?;
    let manifest_path = manifest_path_for(path);
    let mut pre_pca = None;
    let mut config = None;
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path)?;
        let kv = parse_key_values(&text)?;
        if let Some(name) = kv.get("pre_pca") {
            let dir = manifest_path.parent().unwrap_or(Path::new("."));
            pre_pca = Some(read_pca(&dir.join(name))?);
        }
        if kv.contains_key("tau_pos") {
            config = Some(TrainConfig::from_pairs(&kv)?);
        }
    }
    ProjectionModel::from_parts(w, d_in, d_out, pre_pca, config)
}

/// Parses `key\tvalue` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected key<TAB>value"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn tsv_fields(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split('\t').collect()
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

/// Parses ground truth in ranked (`query\tgood|ok|junk\titem`) or group
/// (`item\tgroup[\tq]`) form.
pub fn parse_ground_truth(text: &str, format: TruthFormat) -> Result<GroundTruth> {
    match format {
        TruthFormat::Ranked => parse_ranked(text).map(GroundTruth::Ranked),
        TruthFormat::Groups => parse_groups(text).map(GroundTruth::Groups),
    }
}

fn parse_ranked(text: &str) -> Result<RankedTruth> {
    let mut queries: BTreeMap<String, Relevance> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let f = tsv_fields(line);
        if f.len() != 3 || f.iter().any(|s| s.is_empty()) {
            return Err(Error::parse(i + 1, "expected query<TAB>good|ok|junk<TAB>item"));
        }
        let rel = queries.entry(f[0].to_string()).or_default();
        let tier = match f[1] {
            "good" => &mut rel.good,
            "ok" => &mut rel.ok,
            "junk" => &mut rel.junk,
            other => return Err(Error::parse(i + 1, format!("unknown tier {other:?}"))),
        };
        tier.insert(f[2].to_string());
    }
    for (q, rel) in &queries {
        if let Some(id) = rel.first_overlap() {
            return Err(Error::Overlap {
                query: q.clone(),
                id: id.to_string(),
            });
        }
    }
    Ok(RankedTruth::new(queries))
}

fn parse_groups(text: &str) -> Result<GroupTruth> {
    let mut group_of = BTreeMap::new();
    let mut queries = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let f = tsv_fields(line);
        let ok = match f.len() {
            2 => true,
            3 => f[2] == "q",
            _ => false,
        };
        if !ok || f[0].is_empty() || f[1].is_empty() {
            return Err(Error::parse(i + 1, "expected item<TAB>group[<TAB>q]"));
        }
        if group_of
            .insert(f[0].to_string(), f[1].to_string())
            .is_some()
        {
            return Err(Error::parse(i + 1, format!("item {:?} listed twice", f[0])));
        }
        if f.len() == 3 {
            queries.insert(f[0].to_string());
        }
    }
    Ok(GroupTruth::with_queries(group_of, queries))
}

pub fn read_ground_truth(path: &Path, format: TruthFormat) -> Result<GroundTruth> {
    parse_ground_truth(&fs::read_to_string(path)?, format)
}

pub fn encode_ground_truth(gt: &GroundTruth) -> String {
    let mut out = String::new();
    match gt {
        GroundTruth::Ranked(r) => {
            for (q, rel) in r.queries() {
                for (tier, set) in [("good", &rel.good), ("ok", &rel.ok), ("junk", &rel.junk)] {
                    for id in set {
                        out.push_str(&format!("{q}\t{tier}\t{id}\n"));
                    }
                }
            }
        }
        GroundTruth::Groups(g) => {
            for (item, group) in g.group_of() {
                if g.explicit_queries().contains(item) {
                    out.push_str(&format!("{item}\t{group}\tq\n"));
                } else {
                    out.push_str(&format!("{item}\t{group}\n"));
                }
            }
        }
    }
    out
}

pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    fs::write(path, encode_ground_truth(gt))?;
    Ok(())
}

/// Parses an undirected edge list, one `a\tb` per line.
pub fn parse_match_graph(text: &str) -> Result<MatchGraph> {
    let mut graph = MatchGraph::default();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let f = tsv_fields(line);
        if f.len() != 2 || f[0].is_empty() || f[1].is_empty() {
            return Err(Error::parse(i + 1, "expected id_a<TAB>id_b"));
        }
        if f[0] == f[1] {
            return Err(Error::SelfLoop { line: i + 1 });
        }
        graph.add_edge(f[0], f[1]);
    }
    Ok(graph)
}

pub fn read_match_graph(path: &Path) -> Result<MatchGraph> {
    parse_match_graph(&fs::read_to_string(path)?)
}

pub fn encode_match_graph(graph: &MatchGraph) -> String {
    let mut out = String::new();
    for (a, b) in graph.edges() {
        out.push_str(&format!("{a}\t{b}\n"));
    }
    out
}

/// Parses `id\tclass` lines into a class map.
pub fn parse_classes(text: &str) -> Result<BTreeMap<String, String>> {
    Ok(parse_groups(text)?.group_of().clone())
}

pub fn read_classes(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_classes(&fs::read_to_string(path)?)
}

/// Parses pair lines `a\tb\tpos|neg`.
pub fn parse_pairs(text: &str) -> Result<PairSet> {
    let mut set = PairSet::default();
    for (i, line) in text.lines().enumerate() {
        if is_skippable(line) {
            continue;
        }
        let f = tsv_fields(line);
        if f.len() != 3 || f[0].is_empty() || f[1].is_empty() {
            return Err(Error::parse(i + 1, "expected id_a<TAB>id_b<TAB>pos|neg"));
        }
        let label = match f[2] {
            "pos" => PairLabel::Positive,
            "neg" => PairLabel::Negative,
            other => return Err(Error::parse(i + 1, format!("unknown label {other:?}"))),
        };
        let pair = Pair::new(f[0], f[1]).ok_or(Error::SelfLoop { line: i + 1 })?;
        match label {
            PairLabel::Positive => set.positives.push(pair),
            PairLabel::Negative => set.negatives.push(pair),
        }
    }
    Ok(set)
}

pub fn read_pairs(path: &Path) -> Result<PairSet> {
    parse_pairs(&fs::read_to_string(path)?)
}

pub fn encode_pairs(set: &PairSet) -> String {
    let mut out = String::new();
    for (pairs, label) in [(&set.positives, "pos"), (&set.negatives, "neg")] {
        for p in pairs {
            out.push_str(&format!("{}\t{}\t{label}\n", p.a(), p.b()));
        }
    }
    out
}

/// One ranked-list line: `query\trank\titem\tdistance`, rank starting at 1.
pub fn ranked_line(query: &str, rank: usize, item: &str, distance: f64) -> String {
    format!("{query}\t{rank}\t{item}\t{}\n", format_g(distance, 9))
}

/// Reads descriptors from CSV rows `id,v1,...,vd` (no header).
pub fn parse_csv(text: &str) -> Result<DescriptorSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if rec.len() < 2 {
            return Err(Error::parse(i + 1, "expected id followed by at least one value"));
        }
        let d = rec.len() - 1;
        if *dim.get_or_insert(d) != d {
            return Err(Error::parse(i + 1, format!("expected {} values, got {d}", dim.unwrap())));
        }
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad number {field:?}")))?;
            data.push(v);
        }
    }
    DescriptorSet::new(ids, data, dim.unwrap_or(0))
}

pub fn encode_csv(set: &DescriptorSet) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for (id, row) in set.ids().iter().zip(set.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format_g(*v, 9)));
        writer
            .write_record(&rec)
            .map_err(|e| Error::Validation(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
