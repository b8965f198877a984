//! Scorer bundles: the toy-world oracle and an external-command plugin.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::{Manifest, ToyWorld, ToyWorldConfig};

/// Target-style probability, semantic similarity and language id.
pub trait ScorerBundle: Send + Sync {
    fn style_score(&self, text: &str) -> Result<f64>;
    fn similarity(&self, a: &str, b: &str) -> Result<f64>;
    fn langid(&self, text: &str) -> Result<String>;
}

fn unit(v: f64, what: &str) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::Scorer(format!("{what} returned {v}, outside [0, 1]")))
    }
}

/// Checked wrappers: out-of-range scores become errors.
pub fn checked_style(s: &dyn ScorerBundle, text: &str) -> Result<f64> {
    unit(s.style_score(text)?, "style scorer")
}

pub fn checked_similarity(s: &dyn ScorerBundle, a: &str, b: &str) -> Result<f64> {
    unit(s.similarity(a, b)?, "similarity scorer")
}

/// Exact scorers backed by the generator's own lexicon and marker lists.
pub struct OracleScorer {
    world: ToyWorld,
}

impl OracleScorer {
    pub fn new(world: ToyWorld) -> Self {
        Self { world }
    }

    pub fn from_manifest(path: &Path) -> Result<Self> {
        Ok(Self::new(ToyWorld::new(Manifest::load(path)?.config)?))
    }

    pub fn world(&self) -> &ToyWorld {
        &self.world
    }
}

impl ScorerBundle for OracleScorer {
    fn style_score(&self, text: &str) -> Result<f64> {
        Ok(self.world.style_score(text))
    }

    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.world.similarity(a, b))
    }

    fn langid(&self, text: &str) -> Result<String> {
        Ok(self.world.langid(text).to_string())
    }
}

#[derive(Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum PluginRequest<'a> {
    Style { text: &'a str },
    Similarity { a: &'a str, b: &'a str },
    Langid { text: &'a str },
}

#[derive(Deserialize)]
struct PluginResponse {
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

/// A long-lived subprocess speaking one JSON object per line: requests
/// `{"op":"style","text":..}`, `{"op":"similarity","a":..,"b":..}`,
/// `{"op":"langid","text":..}`; replies `{"score":x}`, `{"label":..}` or
/// `{"error":..}`.
pub struct CommandScorer {
    path: PathBuf,
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl CommandScorer {
    pub fn spawn(path: &Path) -> Result<Self> {
        let mut child = Command::new(path)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Scorer(format!("cannot start {}: {e}", path.display())))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { path: path.to_path_buf(), io: Mutex::new((child, stdin, stdout)) })
    }

    fn call(&self, req: &PluginRequest<'_>) -> Result<PluginResponse> {
        let fail = |m: String| Error::Scorer(format!("{}: {m}", self.path.display()));
        let mut guard = self.io.lock().map_err(|_| fail("scorer lock poisoned".into()))?;
        let (_, stdin, stdout) = &mut *guard;
        let line = serde_json::to_string(req)?;
        writeln!(stdin, "{line}").and_then(|_| stdin.flush()).map_err(|e| fail(e.to_string()))?;
        let mut reply = String::new();
        if stdout.read_line(&mut reply).map_err(|e| fail(e.to_string()))? == 0 {
            return Err(fail("plugin closed its output".into()));
        }
        let resp: PluginResponse = serde_json::from_str(reply.trim()).map_err(|e| fail(format!("bad reply: {e}")))?;
        if let Some(e) = resp.error {
            return Err(fail(e));
        }
        Ok(resp)
    }

    fn score(&self, req: &PluginRequest<'_>) -> Result<f64> {
        self.call(req)?.score.ok_or_else(|| Error::Scorer(format!("{}: reply has no score", self.path.display())))
    }
}

impl Drop for CommandScorer {
    fn drop(&mut self) {
        if let Ok(mut g) = self.io.lock() {
            let _ = g.0.kill();
            let _ = g.0.wait();
        }
    }
}

impl ScorerBundle for CommandScorer {
    fn style_score(&self, text: &str) -> Result<f64> {
        self.score(&PluginRequest::Style { text })
    }

    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        self.score(&PluginRequest::Similarity { a, b })
    }

    fn langid(&self, text: &str) -> Result<String> {
        self.call(&PluginRequest::Langid { text })?.label.ok_or_else(|| Error::Scorer(format!("{}: reply has no label", self.path.display())))
    }
}

/// `oracle` (default toy world), `oracle:<manifest.json>`, or `cmd:<path>`.
pub fn scorer_from_spec(spec: &str) -> Result<Box<dyn ScorerBundle>> {
    if spec == "oracle" {
        return Ok(Box::new(OracleScorer::new(ToyWorld::new(ToyWorldConfig::default())?)));
    }
    if let Some(p) = spec.strip_prefix("oracle:") {
        return Ok(Box::new(OracleScorer::from_manifest(Path::new(p))?));
    }
    if let Some(p) = spec.strip_prefix("cmd:") {
        return Ok(Box::new(CommandScorer::spawn(Path::new(p))?));
    }
    Err(Error::Config(format!("unknown scorer `{spec}` (expected oracle, oracle:<manifest> or cmd:<path>)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Wild;
    impl ScorerBundle for Wild {
        fn style_score(&self, _: &str) -> Result<f64> {
            Ok(1.5)
        }
        fn similarity(&self, _: &str, _: &str) -> Result<f64> {
            Ok(f64::NAN)
        }
        fn langid(&self, _: &str) -> Result<String> {
            Ok("la".into())
        }
    }

    #[test]
    fn out_of_range_scores_are_errors() {
        assert!(checked_style(&Wild, "x").is_err());
        assert!(checked_similarity(&Wild, "x", "y").is_err());
    }

    #[test]
    fn spec_parsing() {
        assert!(scorer_from_spec("oracle").is_ok());
        assert!(scorer_from_spec("bogus").is_err());
        assert!(scorer_from_spec("cmd:/nonexistent/scorer").is_err());
    }

    #[cfg(unix)]
    #[test]
    fn command_plugin_round_trip() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scorer.sh");
        std::fs::write(
            &p,
            "#!/bin/sh\nwhile read -r line; do\n  case \"$line\" in\n    *langid*) echo '{\"label\":\"la\"}' ;;\n    *similarity*) echo '{\"score\":0.25}' ;;\n    *) echo '{\"score\":0.75}' ;;\n  esac\ndone\n",
        )
        .unwrap();
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        let s = CommandScorer::spawn(&p).unwrap();
        assert_eq!(s.style_score("a").unwrap(), 0.75);
        assert_eq!(s.similarity("a", "b").unwrap(), 0.25);
        assert_eq!(s.langid("a").unwrap(), "la");
    }
}
