use std::collections::{HashMap, HashSet};
use std::net::IpAddr;

use super::conf::{ConfFile, ConfRecord};
use super::LaunchError;

/// Port offset applied per extra machine entry that shares a host address.
pub const COLOCATED_HOST_OFFSET: u16 = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementEntry {
    pub rank: usize,
    /// Index into the machines list.
    pub node: usize,
    pub address: String,
    /// Position of the rank among the ranks on its node.
    pub local_index: usize,
    pub debug_port: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Placement {
    pub entries: Vec<PlacementEntry>,
}

/// Block distribution: node `i` takes ranks `[i*c, (i+1)*c)` with `c = ceil(np / m)`.
pub fn assign_ranks(machines: &[String], np: usize) -> Placement {
    assert!(!machines.is_empty(), "machines list must not be empty");
    let per_node = np.div_ceil(machines.len());
    let entries = (0..np)
        .map(|rank| {
            let node = rank / per_node;
            PlacementEntry {
                rank,
                node,
                address: machines[node].clone(),
                local_index: rank % per_node,
                debug_port: None,
            }
        })
        .collect();
    Placement { entries }
}

/// `base + 2 * local_index`.
pub fn compute_debug_port(base: u16, local_index: usize) -> Result<u16, LaunchError> {
    let port = local_index
        .checked_mul(2)
        .and_then(|d| d.checked_add(base as usize))
        .filter(|p| *p <= 65535)
        .ok_or_else(|| LaunchError::Config(format!("debug port {base} + 2*{local_index} exceeds 65535")))?;
    Ok(port as u16)
}

/// Canonical host key used to detect machine entries on the same host.
fn host_key(address: &str) -> String {
    if address.eq_ignore_ascii_case("localhost") {
        return "127.0.0.1".into();
    }
    match address.parse::<IpAddr>() {
        Ok(ip) => ip.to_string(),
        Err(_) => address.to_ascii_lowercase(),
    }
}

impl Placement {
    pub fn np(&self) -> usize {
        self.entries.len()
    }

    /// Nominal ports from the stride-2 formula.
    pub fn with_debug_ports(mut self, base: u16) -> Result<Self, LaunchError> {
        for e in &mut self.entries {
            e.debug_port = Some(compute_debug_port(base, e.local_index)?);
        }
        Ok(self)
    }

    /// Shifts the ports of machine entries that share a host with an earlier
    /// entry by `100 * host_slot`, so co-located "nodes" do not collide.
    /// Placements on distinct hosts are returned unchanged.
    pub fn resolve_colocated(mut self) -> Result<Self, LaunchError> {
        let mut slot_of_node: HashMap<usize, u16> = HashMap::new();
        let mut seen_hosts: HashMap<String, Vec<usize>> = HashMap::new();
        for e in &self.entries {
            let nodes = seen_hosts.entry(host_key(&e.address)).or_default();
            if !nodes.contains(&e.node) {
                nodes.push(e.node);
                slot_of_node.insert(e.node, (nodes.len() - 1) as u16);
            }
        }
        for e in &mut self.entries {
            let slot = slot_of_node[&e.node];
            if slot == 0 {
                continue;
            }
            let port = e
                .debug_port
                .ok_or_else(|| LaunchError::Config("ports not assigned".into()))?;
            e.debug_port = Some(
                (port as u32 + (COLOCATED_HOST_OFFSET as u32) * slot as u32)
                    .try_into()
                    .ok()
                    .filter(|p: &u16| *p < u16::MAX)
                    .ok_or_else(|| LaunchError::Config(format!("rank {}: remapped port exceeds 65535", e.rank)))?,
            );
        }
        // Each rank uses its conf port and the port above it.
        let mut used = HashSet::new();
        for e in &self.entries {
            let port = e.debug_port.unwrap_or(0);
            let host = host_key(&e.address);
            if !used.insert((host.clone(), port)) || !used.insert((host.clone(), port.wrapping_add(1))) {
                return Err(LaunchError::Config(format!(
                    "rank {}: port {port} on {} collides with another rank",
                    e.rank, e.address
                )));
            }
        }
        Ok(self)
    }

    pub fn to_conf(&self) -> Result<ConfFile, LaunchError> {
        let records = self
            .entries
            .iter()
            .map(|e| {
                Ok(ConfRecord {
                    address: e.address.clone(),
                    rank: e.rank,
                    debug_port: e
                        .debug_port
                        .ok_or_else(|| LaunchError::Config(format!("rank {} has no port", e.rank)))?,
                })
            })
            .collect::<Result<Vec<_>, LaunchError>>()?;
        ConfFile::new(records)
    }

    /// Rebuilds a placement from a conf file, deriving node and local indices
    /// from address order.
    pub fn from_conf(conf: &ConfFile) -> Self {
        let mut node_of: HashMap<&str, usize> = HashMap::new();
        let mut count: Vec<usize> = Vec::new();
        let entries = conf
            .records
            .iter()
            .map(|r| {
                let next = node_of.len();
                let node = *node_of.entry(r.address.as_str()).or_insert(next);
                if node == count.len() {
                    count.push(0);
                }
                let local_index = count[node];
                count[node] += 1;
                PlacementEntry {
                    rank: r.rank,
                    node,
                    address: r.address.clone(),
                    local_index,
                    debug_port: Some(r.debug_port),
                }
            })
            .collect();
        Placement { entries }
    }
}
