use super::clip::{ClipKind, Command, ReferenceClip, ReferenceFrame, FRAME_RATE};
use super::RefError;
use crate::env::AgentState;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    frame_rate: u32,
    kind: ClipKind,
    gait_table_hash: String,
    frames: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    t: f64,
    state: AgentState,
    command: Command,
}

pub fn write_clip<W: Write>(clip: &ReferenceClip, mut w: W) -> Result<(), RefError> {
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        frame_rate: FRAME_RATE,
        kind: clip.kind,
        gait_table_hash: clip.gait_table_hash.clone(),
        frames: clip.frames.len(),
    };
    serde_json::to_writer(&mut w, &manifest).map_err(std::io::Error::other)?;
    w.write_all(b"\n")?;
    for (f, c) in clip.frames.iter().zip(&clip.commands) {
        let rec = FrameRecord {
            t: f.time,
            state: f.state.clone(),
            command: *c,
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_clip<R: BufRead>(r: R) -> Result<ReferenceClip, RefError> {
    let mut lines = r.lines().enumerate();
    let (_, first) = lines.next().ok_or(RefError::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let first = first?;
    let version: serde_json::Value = serde_json::from_str(&first).map_err(|e| RefError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let found = version.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(RefError::Schema {
            expected: SCHEMA_VERSION,
            found,
        });
    }
    let manifest: Manifest = serde_json::from_value(version).map_err(|e| RefError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if manifest.frame_rate != FRAME_RATE {
        return Err(RefError::Parse {
            line: 1,
            msg: format!("frame rate {} (expected {FRAME_RATE})", manifest.frame_rate),
        });
    }
    let mut frames = Vec::with_capacity(manifest.frames);
    let mut commands = Vec::with_capacity(manifest.frames);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FrameRecord = serde_json::from_str(&line).map_err(|e| RefError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if !rec.state.is_valid_layout() {
            return Err(RefError::Parse {
                line: i + 1,
                msg: "frame has wrong link count".into(),
            });
        }
        frames.push(ReferenceFrame {
            time: rec.t,
            state: rec.state,
        });
        commands.push(rec.command);
    }
    if frames.len() != manifest.frames {
        return Err(RefError::Parse {
            line: frames.len() + 2,
            msg: format!("expected {} frames, found {}", manifest.frames, frames.len()),
        });
    }
    if frames.len() < 2 {
        return Err(RefError::Parse {
            line: frames.len() + 2,
            msg: "clip needs at least 2 frames".into(),
        });
    }
    Ok(ReferenceClip {
        kind: manifest.kind,
        gait_table_hash: manifest.gait_table_hash,
        frames,
        commands,
    })
}

pub fn save_clip(clip: &ReferenceClip, path: &Path) -> Result<(), RefError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_clip(clip, BufWriter::new(File::create(path)?))
}

pub fn load_clip(path: &Path) -> Result<ReferenceClip, RefError> {
    read_clip(BufReader::new(File::open(path)?))
}

impl ReferenceClip {
    /// Hex SHA-256 of the clip's JSON-Lines encoding.
    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_clip(self, &mut buf).expect("writing to memory cannot fail");
        hex::encode(Sha256::digest(&buf))
    }
}
