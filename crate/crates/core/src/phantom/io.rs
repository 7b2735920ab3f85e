//! On-disk cohort layout.
//!
//! ```text
//! <dir>/manifest.csv     patient_id,time,event,margin,file
//! <dir>/truth.csv        patient_id,iso,infiltration   (phantom cohorts only)
//! <dir>/<id>.cect        "CECT", u32 version, u32 dims[5], f64 LE values
//! ```
//!
//! Times are written with the shortest representation that parses back to
//! the same `f64`, so the round trip is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::{MarginLabel, SurvivalLabel};
use crate::phantom::sequence::{CeCtSequence, PlantedTruth};
use crate::prognet::checkpoint::Reader;
use crate::tensor::Tensor;

pub const VOLUME_MAGIC: &[u8; 4] = b"CECT";
pub const VOLUME_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.csv";
pub const TRUTH: &str = "truth.csv";
const MANIFEST_HEADER: &str = "patient_id,time,event,margin,file";
const TRUTH_HEADER: &str = "patient_id,iso,infiltration";

pub fn volume_to_bytes(volumes: &Tensor) -> Result<Vec<u8>> {
    if volumes.ndim() != 5 {
        return Err(Error::shape(format!("volume must be rank 5, got {:?}", volumes.shape())));
    }
    let mut out = Vec::with_capacity(28 + 8 * volumes.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VOLUME_VERSION.to_le_bytes());
    for &d in volumes.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in volumes.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn volume_from_bytes(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(VOLUME_MAGIC)?;
    r.expect_version(VOLUME_VERSION)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32("dims")? as usize;
    }
    if dims.contains(&0) {
        return Err(r.corrupt(format!("zero extent in dims {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| r.corrupt(format!("dims {dims:?} overflow")))?;
    let values = r.f64s(count, "voxel values")?;
    r.finish()?;
    Tensor::from_vec(&dims, values)
}

fn volume_file(id: &str) -> String {
    format!("{id}.cect")
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("patient id {id:?} is not a safe file stem")))
    }
}

/// Writes every patient plus the manifest; creates `dir` if needed.
pub fn write_dataset(cohort: &[CeCtSequence], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut truth = String::from(TRUTH_HEADER);
    truth.push('\n');
    let mut any_truth = false;
    for seq in cohort {
        check_id(&seq.patient_id)?;
        let file = volume_file(&seq.patient_id);
        fs::write(dir.join(&file), volume_to_bytes(&seq.volumes)?)?;
        manifest.push_str(&format!(
            "{},{:?},{},{},{}\n",
            seq.patient_id,
            seq.label.time,
            u8::from(seq.label.event),
            seq.margin.as_f64() as u8,
            file
        ));
        if let Some(t) = seq.truth {
            any_truth = true;
            truth.push_str(&format!("{},{:?},{:?}\n", seq.patient_id, t.iso, t.infiltration));
        }
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    if any_truth {
        fs::write(dir.join(TRUTH), truth)?;
    }
    Ok(())
}

fn csv_error(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Corrupt {
        path: path.to_path_buf(),
        offset: line as u64,
        reason: format!("line {line}: {msg}"),
    }
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| csv_error(path, line, format!("cannot parse {name} from {raw:?}")))
}

/// Reads a cohort written by [`write_dataset`], in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<CeCtSequence>> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(csv_error(&manifest_path, 1, format!("expected header {MANIFEST_HEADER:?}"))),
    }
    let truth = read_truth(dir)?;
    let mut cohort = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(csv_error(&manifest_path, n, format!("expected 5 fields, got {}", f.len())));
        }
        let id = f[0].trim();
        check_id(id).map_err(|e| csv_error(&manifest_path, n, e))?;
        let time: f64 = parse_field(&manifest_path, n, "time", f[1])?;
        let event: u8 = parse_field(&manifest_path, n, "event", f[2])?;
        let margin: u8 = parse_field(&manifest_path, n, "margin", f[3])?;
        if event > 1 {
            return Err(csv_error(&manifest_path, n, "event must be 0 or 1"));
        }
        let label = SurvivalLabel::new(time, event == 1).map_err(|e| csv_error(&manifest_path, n, e))?;
        let margin = MarginLabel::from_bit(margin).map_err(|e| csv_error(&manifest_path, n, e))?;
        let file = f[4].trim();
        if file.contains('/') || file.contains('\\') || file.starts_with('.') {
            return Err(csv_error(&manifest_path, n, format!("file {file:?} escapes the dataset directory")));
        }
        let vol_path = dir.join(file);
        let volumes = volume_from_bytes(&fs::read(&vol_path)?, &vol_path)?;
        let mut seq = CeCtSequence::new(id, volumes, label, margin)?;
        seq.truth = truth.iter().find(|(tid, _)| tid == id).map(|(_, t)| *t);
        cohort.push(seq);
    }
    Ok(cohort)
}

fn read_truth(dir: &Path) -> Result<Vec<(String, PlantedTruth)>> {
    let path = dir.join(TRUTH);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(&path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(csv_error(&path, i + 1, "expected 3 fields"));
        }
        out.push((
            f[0].trim().to_string(),
            PlantedTruth {
                iso: parse_field(&path, i + 1, "iso", f[1])?,
                infiltration: parse_field(&path, i + 1, "infiltration", f[2])?,
            },
        ));
    }
    Ok(out)
}
