//! Subprocess calls to the media assembly tool (ffmpeg).

use std::path::Path;
use std::process::{Command, Stdio};

use crate::error::{Error, Result};

/// Flags that keep ffmpeg output free of version strings and timestamps.
pub const BITEXACT: [&str; 6] = ["-fflags", "+bitexact", "-flags:v", "+bitexact", "-flags:a", "+bitexact"];

/// Shell-quoted rendering of a command, used as the recorded transcript.
pub fn transcript(program: &str, args: &[String]) -> String {
    let mut parts = vec![program];
    parts.extend(args.iter().map(String::as_str));
    shlex::try_join(parts).unwrap_or_else(|_| format!("{program} {}", args.join(" ")))
}

/// Runs `program args` in `cwd`; a non-zero exit becomes a tool error with stderr attached.
pub fn run(program: &str, args: &[String], cwd: &Path) -> Result<Vec<u8>> {
    let command = transcript(program, args);
    log::debug!("running {command}");
    let output = Command::new(program)
        .args(args)
        .current_dir(cwd)
        .stdin(Stdio::null())
        .output()
        .map_err(|e| Error::Tool {
            command: command.clone(),
            diagnostics: format!("cannot start {program}: {e}"),
        })?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let tail: Vec<&str> = stderr.lines().rev().take(20).collect();
        return Err(Error::Tool {
            command,
            diagnostics: format!(
                "exit {}\n{}",
                output.status,
                tail.into_iter().rev().collect::<Vec<_>>().join("\n")
            ),
        });
    }
    Ok(output.stdout)
}

pub fn available(program: &str) -> bool {
    Command::new(program)
        .arg("-version")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

/// Decodes every video frame of `video` as packed RGB24.
pub fn decode_frames(program: &str, video: &Path, width: u32, height: u32) -> Result<Vec<Vec<u8>>> {
    let args: Vec<String> = [
        "-v", "error", "-nostdin", "-i",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain([video.to_string_lossy().into_owned()])
    .chain(["-map", "0:v:0", "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"].iter().map(|s| s.to_string()))
    .collect();
    let raw = run(program, &args, Path::new("."))?;
    let frame_len = (width * height * 3) as usize;
    if frame_len == 0 || raw.len() % frame_len != 0 {
        return Err(Error::CorruptAsset {
            path: video.to_path_buf(),
            reason: format!("decoded {} bytes, not a whole number of {width}x{height} frames", raw.len()),
        });
    }
    Ok(raw.chunks(frame_len).map(<[u8]>::to_vec).collect())
}
