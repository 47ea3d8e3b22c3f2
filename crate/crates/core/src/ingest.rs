//! Reading and writing tracking frames in the CSV and JSONL file schemas.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::frame::{PlayerPosition, Team, TrackingFrame, PLAYERS_PER_FRAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl InputFormat {
    /// Guesses the format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => InputFormat::Jsonl,
            _ => InputFormat::Csv,
        }
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" => Ok(InputFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based line number in the input file.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub frames: Vec<TrackingFrame>,
    pub rejected: Vec<RejectedRow>,
}

pub fn ingest(path: &Path, format: InputFormat) -> Result<IngestReport> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_frames(BufReader::new(file), format)
}

/// Parses frames, groups them by `(game_id, event_id)` and sorts each group by time.
/// Rows that break the schema or the frame invariants are reported, not fatal.
pub fn read_frames<R: Read>(reader: R, format: InputFormat) -> Result<IngestReport> {
    let mut report = match format {
        InputFormat::Csv => read_csv(reader)?,
        InputFormat::Jsonl => read_jsonl(reader)?,
    };
    for r in &report.rejected {
        log::warn!("rejected frame at line {}: {}", r.line, r.reason);
    }
    sort_frames(&mut report.frames);
    Ok(report)
}

pub fn sort_frames(frames: &mut [TrackingFrame]) {
    frames.sort_by(|a, b| {
        (a.game_id.as_str(), a.event_id.as_str())
            .cmp(&(b.game_id.as_str(), b.event_id.as_str()))
            .then(a.t.total_cmp(&b.t))
    });
}

/// Splits a sorted frame sequence into contiguous `(game_id, event_id)` groups.
pub fn events(frames: &[TrackingFrame]) -> Vec<&[TrackingFrame]> {
    frames
        .chunk_by(|a, b| a.game_id == b.game_id && a.event_id == b.event_id)
        .collect()
}

fn csv_header() -> Vec<String> {
    let mut cols: Vec<String> = [
        "game_id",
        "event_id",
        "t",
        "shot_clock",
        "ball_x",
        "ball_y",
        "ball_z",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 1..=PLAYERS_PER_FRAME {
        for field in ["id", "team", "x", "y"] {
            cols.push(format!("p{i}_{field}"));
        }
    }
    cols
}

fn read_csv<R: Read>(reader: R) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(IngestReport::default()),
        Some(h) => h.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let index: Vec<usize> = csv_header()
        .into_iter()
        .map(|col| {
            names
                .iter()
                .position(|n| *n == col)
                .ok_or(Error::MissingColumn(col))
        })
        .collect::<Result<_>>()?;

    let mut report = IngestReport::default();
    for (row, record) in records.enumerate() {
        let line = row + 2;
        let parsed = record
            .map_err(|e| e.to_string())
            .and_then(|rec| {
                let fields: Vec<&str> = index.iter().map(|&i| rec.get(i).unwrap_or("")).collect();
                frame_from_fields(&fields)
            })
            .and_then(|f| f.validate().map(|_| f));
        match parsed {
            Ok(frame) => report.frames.push(frame),
            Err(reason) => report.rejected.push(RejectedRow { line, reason }),
        }
    }
    Ok(report)
}

fn frame_from_fields(fields: &[&str]) -> Result<TrackingFrame, String> {
    let num = |i: usize, name: &str| -> Result<f64, String> {
        fields[i]
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("column `{name}`: cannot parse `{}`", fields[i]))
    };
    let shot_clock = match fields[3].trim() {
        "" => None,
        s => Some(
            s.parse::<f64>()
                .map_err(|_| format!("column `shot_clock`: cannot parse `{s}`"))?,
        ),
    };
    let mut players = Vec::with_capacity(PLAYERS_PER_FRAME);
    for p in 0..PLAYERS_PER_FRAME {
        let base = 7 + 4 * p;
        let id = fields[base].trim();
        if id.is_empty() {
            continue;
        }
        let team = Team::from_code(fields[base + 1])
            .ok_or_else(|| format!("player {}: bad team `{}`", p + 1, fields[base + 1]))?;
        players.push(PlayerPosition {
            player_id: id.to_string(),
            team,
            x: num(base + 2, &format!("p{}_x", p + 1))?,
            y: num(base + 3, &format!("p{}_y", p + 1))?,
        });
    }
    Ok(TrackingFrame {
        game_id: fields[0].trim().to_string(),
        event_id: fields[1].trim().to_string(),
        t: num(2, "t")?,
        shot_clock,
        ball_x: num(4, "ball_x")?,
        ball_y: num(5, "ball_y")?,
        ball_z: num(6, "ball_z")?,
        players,
        orientation: Default::default(),
    })
}

fn read_jsonl<R: Read>(reader: R) -> Result<IngestReport> {
    let mut report = IngestReport::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<TrackingFrame>(&line)
            .map_err(|e| e.to_string())
            .and_then(|f| f.validate().map(|_| f));
        match parsed {
            Ok(frame) => report.frames.push(frame),
            Err(reason) => report.rejected.push(RejectedRow {
                line: line_no,
                reason,
            }),
        }
    }
    Ok(report)
}

pub fn write_frames<W: Write>(writer: W, frames: &[TrackingFrame], format: InputFormat) -> Result<()> {
    match format {
        InputFormat::Csv => write_csv(writer, frames),
        InputFormat::Jsonl => write_jsonl(writer, frames),
    }
}

pub fn write_frames_file(path: &Path, frames: &[TrackingFrame], format: InputFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_frames(BufWriter::new(file), frames, format)
}

fn write_csv<W: Write>(writer: W, frames: &[TrackingFrame]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let to_err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    wtr.write_record(csv_header()).map_err(to_err)?;
    for f in frames {
        let mut row = vec![
            f.game_id.clone(),
            f.event_id.clone(),
            f.t.to_string(),
            f.shot_clock.map(|s| s.to_string()).unwrap_or_default(),
            f.ball_x.to_string(),
            f.ball_y.to_string(),
            f.ball_z.to_string(),
        ];
        for p in &f.players {
            row.extend([
                p.player_id.clone(),
                p.team.code().to_string(),
                p.x.to_string(),
                p.y.to_string(),
            ]);
        }
        wtr.write_record(&row).map_err(to_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

fn write_jsonl<W: Write>(mut writer: W, frames: &[TrackingFrame]) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(f).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(writer, "{line}").map_err(|e| Error::io("<jsonl output>", e))?;
    }
    writer.flush().map_err(|e| Error::io("<jsonl output>", e))?;
    Ok(())
}
