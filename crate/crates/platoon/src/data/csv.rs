use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{PlatoonRecord, VehicleSeries, DT};
use crate::error::{Error, Result};

pub const HEADER: &str = "platoon_id,vehicle_index,frame,position_m,speed_mps,length_m";

/// A platoon that was read but failed validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub platoon_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub records: Vec<PlatoonRecord>,
    pub rejected: Vec<Rejection>,
}

struct Row {
    vehicle: usize,
    frame: i64,
    position: f64,
    speed: f64,
    length: f64,
}

/// Reads a trajectory CSV, or every `*.csv` file of a directory in file-name
/// order. Malformed rows abort the load; platoons that violate the record
/// invariants are skipped and reported in [`Loaded::rejected`].
pub fn load_trajectories(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let mut out = Loaded::default();
    if meta.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for f in files {
            let part = load_file(&f)?;
            out.records.extend(part.records);
            out.rejected.extend(part.rejected);
        }
    } else {
        out = load_file(path)?;
    }
    for r in &out.rejected {
        log::warn!("rejected platoon {}: {}", r.platoon_id, r.reason);
    }
    Ok(out)
}

fn load_file(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(path, &text)
}

fn parse(path: &Path, text: &str) -> Result<Loaded> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == HEADER => {}
        Some((_, h)) => return Err(parse_err(1, format!("unexpected header {h:?}"))),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut out = Loaded::default();
    let mut current: Option<(String, Vec<Row>)> = None;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(parse_err(lineno, format!("expected 6 fields, found {}", fields.len())));
        }
        let num = |k: usize, name: &str| -> Result<f64> {
            fields[k]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(lineno, format!("invalid {name} {:?}", fields[k])))
        };
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err(lineno, "empty platoon_id".into()));
        }
        let vehicle = fields[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(lineno, format!("invalid vehicle_index {:?}", fields[1])))?;
        let frame = fields[2]
            .trim()
            .parse::<i64>()
            .map_err(|_| parse_err(lineno, format!("invalid frame {:?}", fields[2])))?;
        let row = Row {
            vehicle,
            frame,
            position: num(3, "position_m")?,
            speed: num(4, "speed_mps")?,
            length: num(5, "length_m")?,
        };
        match &mut current {
            Some((cid, rows)) if cid == id => rows.push(row),
            _ => {
                if let Some((cid, rows)) = current.take() {
                    assemble(&mut out, cid, rows);
                }
                current = Some((id.to_string(), vec![row]));
            }
        }
    }
    if let Some((cid, rows)) = current.take() {
        assemble(&mut out, cid, rows);
    }
    Ok(out)
}

fn assemble(out: &mut Loaded, platoon_id: String, rows: Vec<Row>) {
    match build(&platoon_id, rows) {
        Ok(r) => out.records.push(r),
        Err(reason) => out.rejected.push(Rejection { platoon_id, reason }),
    }
}

fn build(platoon_id: &str, rows: Vec<Row>) -> std::result::Result<PlatoonRecord, String> {
    let mut vehicles: Vec<(i64, VehicleSeries)> = Vec::new();
    let mut last: Option<(usize, i64)> = None;
    for row in rows {
        match last {
            Some((v, f)) if v == row.vehicle => {
                if row.frame != f + 1 {
                    return Err(format!(
                        "vehicle {v}: non-contiguous frames ({f} followed by {})",
                        row.frame
                    ));
                }
                let series = &mut vehicles.last_mut().unwrap().1;
                if row.length != series.length {
                    return Err(format!("vehicle {v}: length changes at frame {}", row.frame));
                }
                series.position.push(row.position);
                series.speed.push(row.speed);
            }
            _ => {
                if row.vehicle != vehicles.len() {
                    return Err(format!(
                        "expected vehicle index {} but found {}",
                        vehicles.len(),
                        row.vehicle
                    ));
                }
                vehicles.push((
                    row.frame,
                    VehicleSeries {
                        position: vec![row.position],
                        speed: vec![row.speed],
                        length: row.length,
                    },
                ));
            }
        }
        last = Some((row.vehicle, row.frame));
    }
    let start = vehicles[0].0;
    let len = vehicles[0].1.speed.len();
    for (i, (s, v)) in vehicles.iter().enumerate() {
        if *s != start || v.speed.len() != len {
            return Err(format!(
                "vehicle {i} covers frames {s}..{} but the leader covers {start}..{}",
                *s + v.speed.len() as i64 - 1,
                start + len as i64 - 1
            ));
        }
    }
    let record = PlatoonRecord {
        platoon_id: platoon_id.to_string(),
        dt: DT,
        start_frame: start,
        vehicles: vehicles.into_iter().map(|(_, v)| v).collect(),
    };
    record.validate().map_err(|e| match e {
        Error::InvalidPlatoon { reason, .. } => reason,
        other => other.to_string(),
    })?;
    Ok(record)
}

/// Formats a value with 9 significant digits in positional notation,
/// without trailing zeros.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{x:.decimals$}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

/// Appends the rows of `record` (without header) in canonical form.
pub fn write_record(record: &PlatoonRecord, out: &mut String) {
    for (n, v) in record.vehicles.iter().enumerate() {
        let len = format_sig9(v.length);
        for t in 0..v.speed.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                record.platoon_id,
                n,
                record.frame(t),
                format_sig9(v.position[t]),
                format_sig9(v.speed[t]),
                len
            );
        }
    }
}

/// Serialises records into one CSV document.
pub fn to_csv(records: &[PlatoonRecord]) -> String {
    let mut out = String::with_capacity(64 * records.iter().map(|r| r.duration() * r.vehicles.len()).sum::<usize>() + 64);
    out.push_str(HEADER);
    out.push('\n');
    for r in records {
        write_record(r, &mut out);
    }
    out
}

pub fn write_trajectories(path: impl AsRef<Path>, records: &[PlatoonRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_csv(records)).map_err(|e| Error::io(path, e))
}
