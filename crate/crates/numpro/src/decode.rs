//! External frame extraction through a user-supplied shell command.

use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("decoder template has no {{out_dir}} placeholder")]
    NoOutDir,
    #[error("could not start decoder: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("decoder exited with {status} for {input}: {stderr}")]
    Failed { input: PathBuf, status: String, stderr: String },
}

/// A command template such as
/// `ffmpeg -i {input} -vf fps={fps} {out_dir}/frame_%06d.png`, run with
/// `sh -c`. Substituted paths are single-quoted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeHook {
    template: String,
}

fn quote(path: &Path) -> String {
    format!("'{}'", path.display().to_string().replace('\'', r"'\''"))
}

impl DecodeHook {
    pub fn new(template: impl Into<String>) -> Result<Self, DecodeError> {
        let template = template.into();
        if !template.contains("{out_dir}") {
            return Err(DecodeError::NoOutDir);
        }
        Ok(Self { template })
    }

    pub fn command_line(&self, input: &Path, fps: f64, out_dir: &Path) -> String {
        self.template
            .replace("{input}", &quote(input))
            .replace("{fps}", &fps.to_string())
            .replace("{out_dir}", &quote(out_dir))
    }

    /// Extracts frames of `input` into `out_dir`, creating it first.
    pub fn run(&self, input: &Path, fps: f64, out_dir: &Path) -> Result<(), DecodeError> {
        std::fs::create_dir_all(out_dir).map_err(DecodeError::Spawn)?;
        let line = self.command_line(input, fps, out_dir);
        log::info!("decoding: {line}");
        let output = Command::new("sh").arg("-c").arg(&line).output().map_err(DecodeError::Spawn)?;
        if output.status.success() {
            Ok(())
        } else {
            Err(DecodeError::Failed {
                input: input.to_path_buf(),
                status: output.status.to_string(),
                stderr: String::from_utf8_lossy(&output.stderr).trim().to_owned(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_and_quotes() {
        let hook = DecodeHook::new("dec {input} -r {fps} -o {out_dir}").unwrap();
        assert_eq!(
            hook.command_line(Path::new("a b's.mp4"), 0.5, Path::new("/tmp/o")),
            r"dec 'a b'\''s.mp4' -r 0.5 -o '/tmp/o'"
        );
        assert!(matches!(DecodeHook::new("dec {input}"), Err(DecodeError::NoOutDir)));
    }

    #[test]
    fn runs_and_reports_failure() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("frames");
        DecodeHook::new("touch {out_dir}/frame_000000.png").unwrap().run(Path::new("x"), 1.0, &out).unwrap();
        assert!(out.join("frame_000000.png").exists());
        let err = DecodeHook::new("echo nope >&2; exit 3 # {out_dir}").unwrap().run(Path::new("x"), 1.0, &out);
        assert!(matches!(err, Err(DecodeError::Failed { ref stderr, .. }) if stderr == "nope"));
    }
}
