use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use treecap_core::WeightConfig;

/// Everything needed to reproduce one run. Echoed at the top of every
/// output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<WeightConfig>,
    pub parameters: BTreeMap<&'static str, Value>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn resolve(path: &Path) -> String {
    if let Ok(p) = path.canonicalize() {
        return p.display().to_string();
    }
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    match (parent.canonicalize(), path.file_name()) {
        (Ok(dir), Some(name)) => dir.join(name).display().to_string(),
        _ => path.display().to_string(),
    }
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        RunManifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_path: None,
            config: None,
            parameters: BTreeMap::new(),
            outputs: Vec::new(),
            seed: None,
        }
    }

    pub fn with_config(mut self, path: &Path, config: &WeightConfig) -> Self {
        self.config_path = Some(resolve(path));
        self.config = Some(config.clone());
        self
    }

    pub fn param(mut self, name: &'static str, value: impl Serialize) -> Self {
        self.parameters.insert(name, serde_json::to_value(value).expect("plain data"));
        self
    }

    pub fn output(mut self, path: Option<&Path>) -> Self {
        if let Some(p) = path {
            self.outputs.push(resolve(p));
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data")
    }
}
