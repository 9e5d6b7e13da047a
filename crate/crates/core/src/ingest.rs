//! Procedure records: the on-disk line-delimited format, validation, and
//! segmentation into fixed 15-second windows.
//!
//! A procedure file is UTF-8 text with one JSON object per line. The first
//! line is the header; every following line carries a `"type"` tag naming
//! one of `member`, `turn`, `position`, `action`, `frame`. See
//! `docs/procedure_format.md` for the exact layout.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const WINDOW_SECONDS: f64 = 15.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("unsupported procedure schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

/// Functional role of a team member in the operating room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HeadSurgeon,
    AssistantSurgeon,
    Anesthesiologist,
    CirculatingNurse,
    ScrubNurse,
    Other,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::HeadSurgeon,
        Role::AssistantSurgeon,
        Role::Anesthesiologist,
        Role::CirculatingNurse,
        Role::ScrubNurse,
        Role::Other,
    ];

    pub fn index(self) -> usize {
        Role::ALL.iter().position(|r| *r == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::HeadSurgeon => "head_surgeon",
            Role::AssistantSurgeon => "assistant_surgeon",
            Role::Anesthesiologist => "anesthesiologist",
            Role::CirculatingNurse => "circulating_nurse",
            Role::ScrubNurse => "scrub_nurse",
            Role::Other => "other",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberProfile {
    pub member_id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechTurn {
    pub member_id: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSample {
    pub member_id: String,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub member_id: String,
    pub verb: String,
    pub object: String,
    pub start: f64,
    pub end: f64,
}

/// One pre-extracted paralinguistic frame (low-level descriptors of a voiced
/// frame attributed to a speaker).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaFrame {
    pub member_id: String,
    pub t: f64,
    pub loudness: f64,
    pub alpha_ratio: f64,
    pub hnr: f64,
}

/// Annotated multimodal streams for one procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureRecord {
    pub procedure_id: String,
    pub team_id: String,
    pub duration: f64,
    pub members: Vec<MemberProfile>,
    pub speech_turns: Vec<SpeechTurn>,
    pub position_samples: Vec<PositionSample>,
    pub action_events: Vec<ActionEvent>,
    pub frames: Vec<ParaFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    procedure_id: String,
    team_id: String,
    duration: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Member(MemberProfile),
    Turn(SpeechTurn),
    Position(PositionSample),
    Action(ActionEvent),
    Frame(ParaFrame),
}

impl ProcedureRecord {
    pub fn member_index(&self, member_id: &str) -> Option<usize> {
        self.members.iter().position(|m| m.member_id == member_id)
    }

    /// Checks every record invariant, naming the offending field on failure.
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(invalid(
                "duration",
                format!("must be finite and > 0, got {}", self.duration),
            ));
        }
        if self.members.is_empty() {
            return Err(invalid("members", "at least one member is required"));
        }
        let mut ids = HashSet::new();
        for m in &self.members {
            if !ids.insert(m.member_id.as_str()) {
                return Err(invalid(
                    "members",
                    format!("duplicate member_id {:?}", m.member_id),
                ));
            }
        }
        let known = |field: &str, id: &str| -> Result<(), IngestError> {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(invalid(field, format!("unknown member_id {id:?}")))
            }
        };
        let interval = |field: String, start: f64, end: f64| -> Result<(), IngestError> {
            if !(start.is_finite() && end.is_finite()) {
                return Err(invalid(field, "non-finite bound"));
            }
            if !(0.0 <= start && start < end && end <= self.duration) {
                return Err(invalid(
                    field,
                    format!("requires 0 <= start < end <= duration, got [{start}, {end}] with duration {}", self.duration),
                ));
            }
            Ok(())
        };
        let instant = |field: String, t: f64| -> Result<(), IngestError> {
            if t.is_finite() && (0.0..=self.duration).contains(&t) {
                Ok(())
            } else {
                Err(invalid(
                    field,
                    format!("timestamp {t} outside [0, {}]", self.duration),
                ))
            }
        };
        for (i, turn) in self.speech_turns.iter().enumerate() {
            known(&format!("speech_turns[{i}].member_id"), &turn.member_id)?;
            interval(format!("speech_turns[{i}]"), turn.start, turn.end)?;
        }
        for (i, a) in self.action_events.iter().enumerate() {
            known(&format!("action_events[{i}].member_id"), &a.member_id)?;
            interval(format!("action_events[{i}]"), a.start, a.end)?;
        }
        for (i, p) in self.position_samples.iter().enumerate() {
            known(&format!("position_samples[{i}].member_id"), &p.member_id)?;
            instant(format!("position_samples[{i}].t"), p.t)?;
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(invalid(
                    format!("position_samples[{i}]"),
                    "non-finite coordinate",
                ));
            }
        }
        for (i, f) in self.frames.iter().enumerate() {
            known(&format!("frames[{i}].member_id"), &f.member_id)?;
            instant(format!("frames[{i}].t"), f.t)?;
            if !(f.loudness.is_finite() && f.alpha_ratio.is_finite() && f.hnr.is_finite()) {
                return Err(invalid(format!("frames[{i}]"), "non-finite descriptor"));
            }
        }
        Ok(())
    }

    /// Serializes into the line-delimited format.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            schema_version: SCHEMA_VERSION,
            procedure_id: self.procedure_id.clone(),
            team_id: self.team_id.clone(),
            duration: self.duration,
        };
        push_line(&mut out, &header);
        for m in &self.members {
            push_line(&mut out, &Line::Member(m.clone()));
        }
        for t in &self.speech_turns {
            push_line(&mut out, &Line::Turn(t.clone()));
        }
        for p in &self.position_samples {
            push_line(&mut out, &Line::Position(p.clone()));
        }
        for a in &self.action_events {
            push_line(&mut out, &Line::Action(a.clone()));
        }
        for f in &self.frames {
            push_line(&mut out, &Line::Frame(f.clone()));
        }
        out
    }

    /// Parses and validates the line-delimited format.
    pub fn from_reader(reader: impl BufRead) -> Result<Self, IngestError> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (line_no, first) = lines.next().ok_or(IngestError::Parse {
            line: 1,
            message: "empty file, header expected".into(),
        })?;
        let first = first?;
        let header: Header = serde_json::from_str(&first).map_err(|e| IngestError::Parse {
            line: line_no,
            message: format!("bad header: {e}"),
        })?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(IngestError::SchemaVersion {
                found: header.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let mut record = ProcedureRecord {
            procedure_id: header.procedure_id,
            team_id: header.team_id,
            duration: header.duration,
            members: Vec::new(),
            speech_turns: Vec::new(),
            position_samples: Vec::new(),
            action_events: Vec::new(),
            frames: Vec::new(),
        };
        for (line_no, line) in lines {
            let line = line?;
            let parsed: Line = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            match parsed {
                Line::Member(m) => record.members.push(m),
                Line::Turn(t) => record.speech_turns.push(t),
                Line::Position(p) => record.position_samples.push(p),
                Line::Action(a) => record.action_events.push(a),
                Line::Frame(f) => record.frames.push(f),
            }
        }
        record.validate()?;
        Ok(record)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, IngestError> {
        ProcedureRecord::from_reader(text.as_bytes())
    }
}

fn push_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("record types always serialize"));
    out.push('\n');
}

pub fn load_procedure(path: impl AsRef<Path>) -> Result<ProcedureRecord, IngestError> {
    let file = fs::File::open(path)?;
    ProcedureRecord::from_reader(BufReader::new(file))
}

pub fn save_procedure(record: &ProcedureRecord, path: impl AsRef<Path>) -> Result<(), IngestError> {
    record.validate()?;
    let mut file = fs::File::create(path)?;
    file.write_all(record.to_jsonl().as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_seconds: f64,
    /// Minimum overlap (seconds) for a turn to count as speech in a window;
    /// any strictly larger overlap counts.
    pub min_speech_overlap: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: WINDOW_SECONDS,
            min_speech_overlap: 0.0,
        }
    }
}

/// `[start, end)` bounds of every window of a procedure of the given length.
///
/// The trailing remainder becomes its own window when at least half a window
/// long, otherwise it is merged into the preceding one. The final window is
/// closed on the right so samples stamped exactly at `duration` are kept.
pub fn window_bounds(duration: f64, window_seconds: f64) -> Vec<(f64, f64)> {
    let full = (duration / window_seconds).floor() as usize;
    let remainder = duration - full as f64 * window_seconds;
    let count = if remainder >= window_seconds / 2.0 {
        full + 1
    } else {
        full
    };
    (0..count)
        .map(|t| {
            let start = t as f64 * window_seconds;
            let end = if t + 1 == count {
                duration
            } else {
                (t + 1) as f64 * window_seconds
            };
            (start, end)
        })
        .collect()
}

/// Per-member view of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberWindow {
    pub member_id: String,
    pub role: Role,
    pub present: bool,
    pub spoke: bool,
    /// Turns clipped to the window.
    pub turns: Vec<(f64, f64)>,
    /// Position samples inside the window, time-ordered.
    pub positions: Vec<(f64, f64, f64)>,
    /// `(verb, object)` of every action overlapping the window.
    pub actions: Vec<(String, String)>,
    /// Voiced paralinguistic frames as `[loudness, alpha_ratio, hnr]`.
    pub voiced_frames: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSlice {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    /// One entry per procedure member, in record order.
    pub members: Vec<MemberWindow>,
}

impl WindowSlice {
    pub fn member(&self, member_id: &str) -> Option<&MemberWindow> {
        self.members.iter().find(|m| m.member_id == member_id)
    }

    pub fn present_count(&self) -> usize {
        self.members.iter().filter(|m| m.present).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedProcedure {
    pub procedure_id: String,
    pub team_id: String,
    pub duration: f64,
    pub window_seconds: f64,
    pub windows: Vec<WindowSlice>,
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

fn window_of(t: f64, bounds: &[(f64, f64)]) -> Option<usize> {
    let last = bounds.len().checked_sub(1)?;
    bounds
        .iter()
        .position(|&(s, e)| t >= s && t < e)
        .or_else(|| (t >= bounds[last].0 && t <= bounds[last].1).then_some(last))
}

pub fn window_procedure(record: &ProcedureRecord) -> WindowedProcedure {
    window_procedure_with(record, &WindowConfig::default())
}

/// Segments a record into windows.
///
/// Presence comes from position samples or overlapping action or speech
/// events; speech from turn overlap longer than `min_speech_overlap`. Voiced frames are the member's frames in
/// the window that fall inside one of their turns; when a member spoke but no
/// such frame lands in the window, the frames of the overlapping turns are
/// used instead.
pub fn window_procedure_with(record: &ProcedureRecord, config: &WindowConfig) -> WindowedProcedure {
    let bounds = window_bounds(record.duration, config.window_seconds);
    let mut windows: Vec<WindowSlice> = bounds
        .iter()
        .enumerate()
        .map(|(index, &(start, end))| WindowSlice {
            index,
            start,
            end,
            members: record
                .members
                .iter()
                .map(|m| MemberWindow {
                    member_id: m.member_id.clone(),
                    role: m.role,
                    present: false,
                    spoke: false,
                    turns: Vec::new(),
                    positions: Vec::new(),
                    actions: Vec::new(),
                    voiced_frames: Vec::new(),
                })
                .collect(),
        })
        .collect();
    if windows.is_empty() {
        return WindowedProcedure {
            procedure_id: record.procedure_id.clone(),
            team_id: record.team_id.clone(),
            duration: record.duration,
            window_seconds: config.window_seconds,
            windows,
        };
    }

    let idx = |id: &str| record.member_index(id).expect("validated record");

    let mut positions = record.position_samples.clone();
    positions.sort_by(|a, b| a.t.total_cmp(&b.t));
    for p in &positions {
        if let Some(w) = window_of(p.t, &bounds) {
            let mw = &mut windows[w].members[idx(&p.member_id)];
            mw.positions.push((p.t, p.x, p.y));
            mw.present = true;
        }
    }
    for a in &record.action_events {
        for (w, &b) in bounds.iter().enumerate() {
            if overlap((a.start, a.end), b) > 0.0 {
                let mw = &mut windows[w].members[idx(&a.member_id)];
                mw.actions.push((a.verb.clone(), a.object.clone()));
                mw.present = true;
            }
        }
    }
    let mut turns_by_member: Vec<Vec<(f64, f64)>> = vec![Vec::new(); record.members.len()];
    for turn in &record.speech_turns {
        let m = idx(&turn.member_id);
        turns_by_member[m].push((turn.start, turn.end));
        for (w, &b) in bounds.iter().enumerate() {
            let ov = overlap((turn.start, turn.end), b);
            if ov > config.min_speech_overlap {
                let mw = &mut windows[w].members[m];
                mw.turns.push((turn.start.max(b.0), turn.end.min(b.1)));
                mw.spoke = true;
                mw.present = true;
            }
        }
    }
    let mut frames_by_member: Vec<Vec<&ParaFrame>> = vec![Vec::new(); record.members.len()];
    for f in &record.frames {
        frames_by_member[idx(&f.member_id)].push(f);
    }
    for frames in frames_by_member.iter_mut() {
        frames.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    let inside = |t: f64, spans: &[(f64, f64)]| spans.iter().any(|&(s, e)| t >= s && t <= e);
    for window in windows.iter_mut() {
        let span = (window.start, window.end);
        for (m, mw) in window.members.iter_mut().enumerate() {
            if !mw.spoke {
                continue;
            }
            let in_window: Vec<[f64; 3]> = frames_by_member[m]
                .iter()
                .filter(|f| f.t >= span.0 && f.t <= span.1 && inside(f.t, &mw.turns))
                .map(|f| [f.loudness, f.alpha_ratio, f.hnr])
                .collect();
            mw.voiced_frames = if in_window.is_empty() {
                let touching: Vec<(f64, f64)> = turns_by_member[m]
                    .iter()
                    .copied()
                    .filter(|&t| overlap(t, span) > config.min_speech_overlap)
                    .collect();
                frames_by_member[m]
                    .iter()
                    .filter(|f| inside(f.t, &touching))
                    .map(|f| [f.loudness, f.alpha_ratio, f.hnr])
                    .collect()
            } else {
                in_window
            };
        }
    }
    WindowedProcedure {
        procedure_id: record.procedure_id.clone(),
        team_id: record.team_id.clone(),
        duration: record.duration,
        window_seconds: config.window_seconds,
        windows,
    }
}
