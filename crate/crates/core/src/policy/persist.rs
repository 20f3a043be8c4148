use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::nn::ParamStore;
use crate::policy::net::{PolicyConfig, PolicyNet};

/// Writes `store` with the architecture it was built from, plus any extra
/// metadata.
pub fn save_policy(path: impl AsRef<Path>, config: &PolicyConfig, store: &ParamStore, extra: serde_json::Value) -> Result<()> {
    let meta = json!({ "policy": config, "extra": extra });
    checkpoint::save(path, store, meta)
}

/// Rebuilds the network a checkpoint was written from and loads its
/// parameters.
pub fn load_policy(path: impl AsRef<Path>) -> Result<(PolicyNet, ParamStore, serde_json::Value)> {
    let (loaded, header) = checkpoint::load(path)?;
    let config: PolicyConfig = serde_json::from_value(header.meta.get("policy").cloned().unwrap_or_default())
        .map_err(|e| Error::Checkpoint(format!("missing or invalid architecture metadata: {e}")))?;
    let (net, mut store) = PolicyNet::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    checkpoint::load_into(&mut store, &loaded)?;
    let extra = header.meta.get("extra").cloned().unwrap_or_default();
    Ok((net, store, extra))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let cfg = PolicyConfig::desk();
        let (_, mut store) = PolicyNet::new(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        crate::policy::fixtures::scramble(&mut store, 1, 0.1);
        save_policy(&path, &cfg, &store, json!({"stage": 1})).unwrap();
        let (net, back, extra) = load_policy(&path).unwrap();
        assert_eq!(back, store);
        assert_eq!(net.config, cfg);
        assert_eq!(extra["stage"], 1);

        let wider = PolicyConfig { qk_dim: cfg.qk_dim * 2, ..cfg };
        save_policy(&path, &wider, &store, json!(null)).unwrap();
        assert!(matches!(load_policy(&path), Err(Error::Checkpoint(_))));
    }
}
