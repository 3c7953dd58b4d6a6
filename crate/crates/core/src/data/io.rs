//! NGSim CSV ingestion and the track cache format
//! (`agent_id,frame,x_m,y_m,v,a`).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Track, DEFAULT_FRAME_RATE};
use crate::error::{Error, Result};

pub const FEET_TO_METRES: f64 = 0.3048;

const NGSIM_COLUMNS: [&str; 6] = ["Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "v_Vel", "v_Acc"];
const CACHE_HEADER: [&str; 6] = ["agent_id", "frame", "x_m", "y_m", "v", "a"];

#[derive(Debug, Clone, Copy)]
struct Row {
    agent: u64,
    frame: i64,
    x: f64,
    y: f64,
    v: Option<f64>,
    a: Option<f64>,
}

fn column_indices(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Error::Data(format!("missing column `{name}`")))
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {name} from `{raw}`")))
}

fn parse_optional(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<Option<f64>> {
    match rec.get(idx).map(str::trim) {
        None | Some("") => Ok(None),
        Some(_) => parse_field(rec, idx, name, line).map(Some),
    }
}

/// Groups rows per agent, sorted by frame. Duplicate frames are an error;
/// gaps split an agent into several contiguous tracks.
fn group_rows(rows: Vec<Row>, frame_rate: f64) -> Result<Vec<Track>> {
    let mut by_agent: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    for r in rows {
        by_agent.entry(r.agent).or_default().push(r);
    }
    let mut tracks = Vec::new();
    for (agent, mut rows) in by_agent {
        rows.sort_by_key(|r| r.frame);
        if let Some(w) = rows.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Data(format!(
                "vehicle {agent}: frames are not strictly increasing (frame {} repeats)",
                w[0].frame
            )));
        }
        let mut start = 0;
        for end in 1..=rows.len() {
            if end == rows.len() || rows[end].frame != rows[end - 1].frame + 1 {
                let run = &rows[start..end];
                start = end;
                if run.len() < 2 {
                    continue;
                }
                let all = |f: fn(&Row) -> Option<f64>| run.iter().map(f).collect::<Option<Vec<f64>>>();
                let track = Track {
                    agent_id: agent,
                    frame_rate,
                    first_frame: run[0].frame,
                    positions: run.iter().map(|r| [r.x, r.y]).collect(),
                    speed: all(|r| r.v),
                    accel: all(|r| r.a),
                };
                track.validate()?;
                tracks.push(track);
            }
        }
    }
    Ok(tracks)
}

/// Reads NGSim trajectory CSV (feet) into metric tracks at 10 Hz.
/// `Local_X` is the lateral and `Local_Y` the longitudinal axis.
pub fn ingest_ngsim(path: &Path) -> Result<Vec<Track>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_ngsim_reader(file).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn ingest_ngsim_reader<R: Read>(reader: R) -> Result<Vec<Track>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
    let idx = column_indices(&headers, &NGSIM_COLUMNS)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let line = i as u64 + 2;
        rows.push(Row {
            agent: parse_field(&rec, idx[0], "Vehicle_ID", line)?,
            frame: parse_field(&rec, idx[1], "Frame_ID", line)?,
            x: parse_field::<f64>(&rec, idx[2], "Local_X", line)? * FEET_TO_METRES,
            y: parse_field::<f64>(&rec, idx[3], "Local_Y", line)? * FEET_TO_METRES,
            v: parse_optional(&rec, idx[4], "v_Vel", line)?.map(|v| v * FEET_TO_METRES),
            a: parse_optional(&rec, idx[5], "v_Acc", line)?.map(|a| a * FEET_TO_METRES),
        });
    }
    group_rows(rows, DEFAULT_FRAME_RATE)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_tracks<W: Write>(writer: W, tracks: &[Track]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Data(format!("writing track cache: {e}"));
    w.write_record(CACHE_HEADER).map_err(err)?;
    for t in tracks {
        for (i, p) in t.positions.iter().enumerate() {
            w.write_record([
                t.agent_id.to_string(),
                (t.first_frame + i as i64).to_string(),
                p[0].to_string(),
                p[1].to_string(),
                fmt_opt(t.speed.as_ref().map(|s| s[i])),
                fmt_opt(t.accel.as_ref().map(|a| a[i])),
            ])
            .map_err(err)?;
        }
    }
    w.flush()
        .map_err(|e| Error::Data(format!("writing track cache: {e}")))?;
    Ok(())
}

pub fn read_tracks<R: Read>(reader: R, frame_rate: f64) -> Result<Vec<Track>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Data(e.to_string()))?.clone();
    let idx = column_indices(&headers, &CACHE_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(e.to_string()))?;
        let line = i as u64 + 2;
        rows.push(Row {
            agent: parse_field(&rec, idx[0], "agent_id", line)?,
            frame: parse_field(&rec, idx[1], "frame", line)?,
            x: parse_field(&rec, idx[2], "x_m", line)?,
            y: parse_field(&rec, idx[3], "y_m", line)?,
            v: parse_optional(&rec, idx[4], "v", line)?,
            a: parse_optional(&rec, idx[5], "a", line)?,
        });
    }
    group_rows(rows, frame_rate)
}

pub fn save_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_tracks(std::io::BufWriter::new(file), tracks)
}

pub fn load_tracks(path: &Path, frame_rate: f64) -> Result<Vec<Track>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_tracks(std::io::BufReader::new(file), frame_rate)
}
