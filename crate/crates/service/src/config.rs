use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use replykit_core::retrieval::MAX_K;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_PORT: u16 = 8743;

/// Service settings, read from one TOML file. Relative paths in the file
/// resolve against the file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    /// Model checkpoint. Without one the service only handles annotations
    /// and reports, and /v1/recommend answers 503.
    pub checkpoint: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub annotations: PathBuf,
    /// Issued qids with their questions, one JSON object per line.
    pub sessions: PathBuf,
    pub top_k: usize,
    pub max_body_bytes: usize,
    pub max_question_chars: usize,
    /// Blinded evaluation: each question is served by the two scorers in
    /// turn and responses carry neither scorer names nor scores.
    pub eval_mode: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            checkpoint: None,
            pool: None,
            annotations: PathBuf::from("annotations.jsonl"),
            sessions: PathBuf::from("sessions.jsonl"),
            top_k: 3,
            max_body_bytes: 64 * 1024,
            max_question_chars: 2000,
            eval_mode: false,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative_to(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_relative_to(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(p) = self.checkpoint.as_mut() {
            fix(p);
        }
        if let Some(p) = self.pool.as_mut() {
            fix(p);
        }
        fix(&mut self.annotations);
        fix(&mut self.sessions);
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if !(1..=MAX_K).contains(&self.top_k) {
            return Err(ServiceError::Config(format!(
                "top_k must be in 1..={MAX_K}, got {}",
                self.top_k
            )));
        }
        if self.checkpoint.is_some() != self.pool.is_some() {
            return Err(ServiceError::Config(
                "checkpoint and pool must be given together".into(),
            ));
        }
        if self.max_body_bytes == 0 || self.max_question_chars == 0 {
            return Err(ServiceError::Config("size limits must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ServiceConfig::from_toml("").unwrap();
        assert_eq!(cfg, ServiceConfig::default());
        assert_eq!(cfg.listen.port(), 8743);
        let cfg = ServiceConfig::from_toml(
            "top_k = 5\neval_mode = true\npool = \"p.json\"\ncheckpoint = \"m.denc\"",
        )
        .unwrap();
        assert_eq!(cfg.top_k, 5);
        assert!(cfg.eval_mode);
        cfg.validate().unwrap();
        assert!(ServiceConfig::from_toml("colour = 1").is_err());
        assert_eq!(ServiceConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        let mut cfg = ServiceConfig {
            top_k: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.top_k = 51;
        assert!(cfg.validate().is_err());
        cfg.top_k = 3;
        cfg.pool = Some("p.json".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn relative_paths() {
        let mut cfg = ServiceConfig {
            checkpoint: Some("m.denc".into()),
            ..Default::default()
        };
        cfg.resolve_relative_to(Path::new("/srv/rk"));
        assert_eq!(cfg.checkpoint.unwrap(), PathBuf::from("/srv/rk/m.denc"));
        assert_eq!(cfg.annotations, PathBuf::from("/srv/rk/annotations.jsonl"));
    }
}
