use super::{Activation, DenseLayer, DenseNet, NnError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Serialized form of one layer: `{"act", "w_shape": [rows, cols], "w", "b"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub act: String,
    pub w_shape: [usize; 2],
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: String,
    pub seed: u64,
    pub k: usize,
    pub created_at: String,
    /// Per-feature observation scale the networks were trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_scale: Option<Vec<f64>>,
}

/// `{"meta": {...}, "nets": {name: {"layers": [...]}}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub nets: BTreeMap<String, NetRecord>,
}

impl From<&DenseNet> for NetRecord {
    fn from(net: &DenseNet) -> Self {
        NetRecord {
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    act: l.activation().tag().to_string(),
                    w_shape: [l.out_dim(), l.in_dim()],
                    w: l.weights().to_vec(),
                    b: l.biases().to_vec(),
                })
                .collect(),
        }
    }
}

impl NetRecord {
    pub fn to_net(&self, name: &str) -> Result<DenseNet, NnError> {
        let layers = self
            .layers
            .iter()
            .map(|r| {
                let act = Activation::from_tag(&r.act)
                    .ok_or_else(|| NnError::UnknownActivation(r.act.clone()))?;
                DenseLayer::new(r.w_shape[1], r.w_shape[0], act, r.w.clone(), r.b.clone())
            })
            .collect::<Result<Vec<_>, _>>()?;
        DenseNet::from_layers(name, layers)
    }
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self {
            meta,
            nets: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, net: &DenseNet) {
        self.nets.insert(name.to_string(), NetRecord::from(net));
    }

    pub fn net(&self, name: &str) -> Result<DenseNet, NnError> {
        self.nets
            .get(name)
            .ok_or_else(|| NnError::Invalid(format!("checkpoint has no net named {name:?}")))?
            .to_net(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
