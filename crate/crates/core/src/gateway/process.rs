//! Local command adapters.
//!
//! The command template is split shell-style and each argument gets
//! `{input}`, `{output}`, `{seed}` and `{payload}` substituted. `{payload}` is
//! a JSON file with the full request payload. What `{input}` holds depends on
//! the kind: the prompt or speech text for text, image and tts; the payload
//! file for music; the source file for vocal separation and depth effect.
//! For vocal separation `{output}` is a directory that must receive
//! `vocals.wav` and `instruments.wav`. Exit status 0 means success.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{Backend, BackendCall, BackendKind, BackendOutput};
use crate::error::{BackendError, Error, Result};

pub struct ProcessBackend {
    kind: BackendKind,
    template: Vec<String>,
}

impl ProcessBackend {
    pub fn new(kind: BackendKind, command: &str) -> Result<Self> {
        let template = shlex::split(command)
            .filter(|args| !args.is_empty())
            .ok_or_else(|| Error::Config(format!("cannot parse {kind} command template `{command}`")))?;
        Ok(Self { kind, template })
    }

    fn output_name(&self) -> &'static str {
        match self.kind {
            BackendKind::Text => "output.txt",
            BackendKind::Image => "output.png",
            BackendKind::Tts | BackendKind::Music => "output.wav",
            BackendKind::VocalSeparation => "stems",
            BackendKind::DepthEffect => "output.mp4",
        }
    }

    /// Arguments with placeholders substituted.
    pub fn render_args(&self, input: &Path, output: &Path, payload: &Path, seed: u64) -> Vec<String> {
        self.template
            .iter()
            .map(|arg| {
                arg.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
                    .replace("{payload}", &payload.to_string_lossy())
                    .replace("{seed}", &seed.to_string())
            })
            .collect()
    }
}

fn io_failure(e: std::io::Error) -> BackendError {
    BackendError::Failed(e.to_string())
}

fn read_output(path: &Path) -> Result<Vec<u8>, BackendError> {
    std::fs::read(path).map_err(|e| BackendError::Malformed(format!("expected output at {}: {e}", path.display())))
}

/// Runs `args` and waits up to `timeout`, killing the child on expiry.
pub fn run_with_timeout(args: &[String], timeout: Duration) -> Result<(), BackendError> {
    let mut child = Command::new(&args[0])
        .args(&args[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| BackendError::Unavailable(format!("cannot start `{}`: {e}", args[0])))?;
    let stderr_reader = child.stderr.take().map(|mut pipe| {
        std::thread::spawn(move || {
            use std::io::Read;
            let mut buf = String::new();
            let _ = pipe.read_to_string(&mut buf);
            buf
        })
    });
    let deadline = Instant::now() + timeout;
    loop {
        if let Some(status) = child.try_wait().map_err(io_failure)? {
            if status.success() {
                return Ok(());
            }
            let stderr = stderr_reader.and_then(|h| h.join().ok()).unwrap_or_default();
            let tail: String = stderr.chars().rev().take(400).collect::<Vec<_>>().into_iter().rev().collect();
            return Err(BackendError::Failed(format!("`{}` exited with {status}: {tail}", args[0])));
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            return Err(BackendError::Timeout);
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

impl Backend for ProcessBackend {
    fn invoke(&self, call: &BackendCall<'_>) -> Result<BackendOutput, BackendError> {
        let req = call.request;
        let work = tempfile::tempdir().map_err(io_failure)?;
        let payload_path = work.path().join("payload.json");
        std::fs::write(&payload_path, serde_json::to_vec(&req.payload).unwrap_or_default()).map_err(io_failure)?;

        let input: PathBuf = match self.kind {
            BackendKind::Text | BackendKind::Image => {
                let path = work.path().join("input.txt");
                std::fs::write(&path, req.str_field("prompt")?).map_err(io_failure)?;
                path
            }
            BackendKind::Tts => {
                let path = work.path().join("input.txt");
                std::fs::write(&path, req.str_field("text")?).map_err(io_failure)?;
                path
            }
            BackendKind::Music => payload_path.clone(),
            BackendKind::VocalSeparation | BackendKind::DepthEffect => call
                .inputs
                .first()
                .cloned()
                .ok_or_else(|| BackendError::Malformed(format!("{} needs an input file", self.kind)))?,
        };
        let output = work.path().join(self.output_name());
        if self.kind == BackendKind::VocalSeparation {
            std::fs::create_dir_all(&output).map_err(io_failure)?;
        }

        let args = self.render_args(&input, &output, &payload_path, req.seed());
        run_with_timeout(&args, call.timeout)?;

        match self.kind {
            BackendKind::Text => {
                let bytes = read_output(&output)?;
                String::from_utf8(bytes)
                    .map(BackendOutput::Text)
                    .map_err(|e| BackendError::Malformed(e.to_string()))
            }
            BackendKind::Image => Ok(BackendOutput::Image {
                bytes: read_output(&output)?,
                nsfw: None,
            }),
            BackendKind::Tts | BackendKind::Music => Ok(BackendOutput::Audio(read_output(&output)?)),
            BackendKind::VocalSeparation => Ok(BackendOutput::Stems {
                vocals: read_output(&output.join("vocals.wav"))?,
                instruments: read_output(&output.join("instruments.wav"))?,
            }),
            BackendKind::DepthEffect => Ok(BackendOutput::Video(read_output(&output)?)),
        }
    }
}
