use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use acne_core::config::KeyValues;
use acne_core::pipeline::PipelineSettings;
use acne_core::{Error, Result};

pub const DEFAULT_MAX_BODY_BYTES: usize = 10 * 1024 * 1024;

/// Service settings read from a `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub listen_addr: SocketAddr,
    pub max_body_bytes: usize,
    /// Append-only history log; history is kept in memory when unset.
    pub store_path: Option<PathBuf>,
    pub retain_images: bool,
    /// Where retained uploads go; defaults to `images/` beside the store.
    pub image_dir: Option<PathBuf>,
    /// GET on a user with no records answers 404 instead of `[]`.
    pub strict_users: bool,
    /// Concurrent scoring jobs; forced to 1 for non-concurrent backends.
    pub workers: usize,
    pub pipeline: PipelineSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            store_path: None,
            retain_images: false,
            image_dir: None,
            strict_users: false,
            workers: std::thread::available_parallelism().map_or(1, usize::from),
            pipeline: PipelineSettings::default(),
        }
    }
}

const OWN_KEYS: &[&str] = &[
    "listen_addr",
    "max_body_bytes",
    "store_path",
    "retain_images",
    "image_dir",
    "strict_users",
    "workers",
];

impl ServiceConfig {
    pub fn allowed_keys() -> Vec<&'static str> {
        OWN_KEYS.iter().chain(PipelineSettings::KEYS).copied().collect()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.reject_unknown(&Self::allowed_keys())?;
        let d = Self::default();
        let cfg = Self {
            listen_addr: kv.get("listen_addr")?.unwrap_or(d.listen_addr),
            max_body_bytes: kv.get("max_body_bytes")?.unwrap_or(d.max_body_bytes),
            store_path: kv.get_str("store_path").map(PathBuf::from),
            retain_images: kv.get("retain_images")?.unwrap_or(false),
            image_dir: kv.get_str("image_dir").map(PathBuf::from),
            strict_users: kv.get("strict_users")?.unwrap_or(false),
            workers: kv.get("workers")?.unwrap_or(d.workers),
            pipeline: PipelineSettings::from_kv(kv)?,
        };
        if cfg.workers == 0 || cfg.max_body_bytes == 0 {
            return Err(Error::Config("workers and max_body_bytes must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn retained_image_dir(&self) -> Option<PathBuf> {
        if !self.retain_images {
            return None;
        }
        self.image_dir.clone().or_else(|| {
            let base = self
                .store_path
                .as_deref()
                .and_then(Path::parent)
                .unwrap_or(Path::new("."));
            Some(base.join("images"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ServiceConfig::from_kv(&KeyValues::parse("").unwrap()).unwrap();
        assert_eq!(cfg.max_body_bytes, 10 * 1024 * 1024);
        assert!(!cfg.retain_images);
        let kv = KeyValues::parse(
            "listen_addr=0.0.0.0:9000\nmax_body_bytes=1024\nretain_images=true\nstore_path=/d/h.jsonl\ntest_backend=true\n",
        )
        .unwrap();
        let cfg = ServiceConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.listen_addr.port(), 9000);
        assert_eq!(cfg.max_body_bytes, 1024);
        assert!(cfg.pipeline.test_backend);
        assert_eq!(cfg.retained_image_dir().unwrap(), PathBuf::from("/d/images"));
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ServiceConfig::from_kv(&KeyValues::parse("listen_adr=x\n").unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains("\"listen_adr\""), "{err}");
    }
}
