use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Topology;
use crate::error::{Error, Result};

/// On-disk topology description. Bus numbers are 1-based.
///
/// ```toml
/// n_nodes = 4
/// edges = [[1, 2], [2, 3], [3, 4], [4, 1]]
/// measured_buses = [1, 3]
/// names = ["A", "B", "C", "D"]   # optional
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
    pub measured_buses: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl TopologyConfig {
    pub fn into_topology(self) -> Result<Topology> {
        let to_index = |bus: usize| {
            if bus == 0 || bus > self.n_nodes {
                Err(Error::Topology(format!(
                    "bus {bus} outside 1..={}",
                    self.n_nodes
                )))
            } else {
                Ok(bus - 1)
            }
        };
        let edges = self
            .edges
            .iter()
            .map(|[u, v]| Ok((to_index(*u)?, to_index(*v)?)))
            .collect::<Result<Vec<_>>>()?;
        let measured = self
            .measured_buses
            .iter()
            .map(|&b| to_index(b))
            .collect::<Result<Vec<_>>>()?;
        let mut topology = Topology::new(self.n_nodes, edges, measured)?;
        if let Some(names) = self.names {
            topology = topology.with_names(names)?;
        }
        topology.require_connected()?;
        Ok(topology)
    }
}

impl From<&Topology> for TopologyConfig {
    fn from(t: &Topology) -> Self {
        TopologyConfig {
            n_nodes: t.n_nodes(),
            edges: t.edges().iter().map(|&(u, v)| [u + 1, v + 1]).collect(),
            measured_buses: t.measured().iter().map(|m| m + 1).collect(),
            names: t.names().map(<[String]>::to_vec),
        }
    }
}

impl Topology {
    /// Parses a topology config; the result must be connected.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let cfg: TopologyConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("topology: {e}")))?;
        cfg.into_topology()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_config_str(&text)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(&TopologyConfig::from(self)).expect("topology serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_one_based_config() {
        let t = Topology::from_config_str(
            "n_nodes = 3\nedges = [[1, 2], [2, 3]]\nmeasured_buses = [1, 3]\n",
        )
        .unwrap();
        assert_eq!(t.edges(), &[(0, 1), (1, 2)]);
        assert!(t.is_measured(0) && t.is_measured(2) && !t.is_measured(1));
    }

    #[test]
    fn default_feeder_round_trips_through_text() {
        let t = Topology::default_feeder();
        let back = Topology::from_config_str(&t.to_config_string()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_configs() {
        let zero_bus = "n_nodes = 2\nedges = [[0, 1]]\nmeasured_buses = []\n";
        assert!(matches!(
            Topology::from_config_str(zero_bus),
            Err(Error::Topology(_))
        ));
        let disconnected = "n_nodes = 3\nedges = [[1, 2]]\nmeasured_buses = [1]\n";
        assert!(Topology::from_config_str(disconnected).is_err());
        assert!(matches!(
            Topology::from_config_str("n_nodes = "),
            Err(Error::Config(_))
        ));
    }
}
