//! General Manager Tier (GMT): node registry, tier allocation records,
//! heartbeat monitoring, and the crash recovery policies.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::demand::{Demand, DemandId, DemandType, ParamValue, Params};
use crate::store::{PutOutcome, StoreApi, StoreError};
use crate::tiers::{TierId, TierKind};

pub const HEARTBEAT_LIVE_MS: u64 = 1_000;
pub const HEARTBEAT_SIM_TICKS: u64 = 1;
pub const MISSED_HEARTBEATS_CRASH: u64 = 3;

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("host {0:?} already registered")]
    DuplicateHost(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("unknown tier {0}")]
    UnknownTier(String),
    #[error("no candidate node for recovery")]
    NoCandidateNode,
    #[error("store failure: {0}")]
    Store(#[from] StoreError),
}

/// The five recovery policies, in their canonical numeric order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryPolicy {
    LetItBe = 0,
    TryNextUntilTheEnd = 1,
    TryNextAndWrapAround = 2,
    IfCrashThenTryNextUntilTheEnd = 3,
    IfCrashThenRestart = 4,
}

impl RecoveryPolicy {
    pub fn from_code(code: i64) -> Option<Self> {
        Some(match code {
            0 => RecoveryPolicy::LetItBe,
            1 => RecoveryPolicy::TryNextUntilTheEnd,
            2 => RecoveryPolicy::TryNextAndWrapAround,
            3 => RecoveryPolicy::IfCrashThenTryNextUntilTheEnd,
            4 => RecoveryPolicy::IfCrashThenRestart,
            _ => return None,
        })
    }

    pub fn code(self) -> i64 {
        self as i64
    }

    /// Policies 3 and 4 act only on a confirmed crash.
    pub fn requires_crash_confirmation(self) -> bool {
        matches!(
            self,
            RecoveryPolicy::IfCrashThenTryNextUntilTheEnd | RecoveryPolicy::IfCrashThenRestart
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecoveryAction {
    /// Leave the tier alone.
    None,
    /// Respawn the tier on another node.
    Reassign { node_id: String },
    /// Respawn the tier on its own node.
    Restart { node_id: String },
}

#[derive(Debug, Clone)]
pub struct GipsyNode {
    pub node_id: String,
    pub host: String,
    pub up: bool,
}

#[derive(Debug, Clone)]
struct TierRecord {
    id: TierId,
    last_heartbeat: u64,
}

/// The manager proper. Administrative actions are themselves recorded
/// as system demands so the warehouse holds an audit trail.
pub struct GlobalManager {
    store: Arc<dyn StoreApi>,
    nodes: BTreeMap<String, GipsyNode>,
    /// Registration order, the basis for try-next traversal.
    node_order: Vec<String>,
    node_counter: u64,
    one_node_per_host: bool,
    tiers: BTreeMap<String, TierRecord>,
    tier_counter: u64,
    heartbeat_interval: u64,
    missed_to_crash: u64,
    rng: Mutex<ChaCha8Rng>,
}

impl GlobalManager {
    pub fn new(store: Arc<dyn StoreApi>, heartbeat_interval: u64, seed: u64) -> Self {
        Self {
            store,
            nodes: BTreeMap::new(),
            node_order: Vec::new(),
            node_counter: 0,
            one_node_per_host: true,
            tiers: BTreeMap::new(),
            tier_counter: 0,
            heartbeat_interval,
            missed_to_crash: MISSED_HEARTBEATS_CRASH,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn allow_many_nodes_per_host(&mut self) {
        self.one_node_per_host = false;
    }

    pub fn register_node(&mut self, host: &str, now: u64) -> Result<String, ManagerError> {
        if self.one_node_per_host && self.nodes.values().any(|n| n.host == host) {
            return Err(ManagerError::DuplicateHost(host.to_string()));
        }
        let node_id = format!("node-{}", self.node_counter);
        self.node_counter += 1;
        self.nodes.insert(
            node_id.clone(),
            GipsyNode { node_id: node_id.clone(), host: host.to_string(), up: true },
        );
        self.node_order.push(node_id.clone());
        self.record_system_demand("register_node", &node_id, None, now)?;
        Ok(node_id)
    }

    pub fn node(&self, node_id: &str) -> Option<&GipsyNode> {
        self.nodes.get(node_id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &GipsyNode> {
        self.node_order.iter().map(|id| &self.nodes[id])
    }

    pub fn mark_node_down(&mut self, node_id: &str) -> Result<(), ManagerError> {
        self.nodes
            .get_mut(node_id)
            .map(|n| n.up = false)
            .ok_or_else(|| ManagerError::UnknownNode(node_id.to_string()))
    }

    pub fn mark_node_up(&mut self, node_id: &str) -> Result<(), ManagerError> {
        self.nodes
            .get_mut(node_id)
            .map(|n| n.up = true)
            .ok_or_else(|| ManagerError::UnknownNode(node_id.to_string()))
    }

    /// Records a tier allocation on a registered node and starts
    /// monitoring its heartbeats. Instance numbers are manager-wide
    /// and never reused.
    pub fn allocate_tier(
        &mut self,
        node_id: &str,
        kind: TierKind,
        now: u64,
    ) -> Result<TierId, ManagerError> {
        if !self.nodes.contains_key(node_id) {
            return Err(ManagerError::UnknownNode(node_id.to_string()));
        }
        let id = TierId {
            node_id: node_id.to_string(),
            kind,
            instance: self.tier_counter,
        };
        self.tier_counter += 1;
        self.record_system_demand("allocate_tier", node_id, Some(&id), now)?;
        self.tiers
            .insert(id.to_string(), TierRecord { id: id.clone(), last_heartbeat: now });
        Ok(id)
    }

    pub fn deallocate_tier(&mut self, id: &TierId, now: u64) -> Result<(), ManagerError> {
        let key = id.to_string();
        if self.tiers.remove(&key).is_none() {
            return Err(ManagerError::UnknownTier(key));
        }
        self.record_system_demand("deallocate_tier", &id.node_id, Some(id), now)?;
        Ok(())
    }

    pub fn monitored_tiers(&self) -> impl Iterator<Item = &TierId> {
        self.tiers.values().map(|t| &t.id)
    }

    pub fn record_heartbeat(&mut self, id: &TierId, now: u64) -> Result<(), ManagerError> {
        let key = id.to_string();
        let rec = self
            .tiers
            .get_mut(&key)
            .ok_or(ManagerError::UnknownTier(key))?;
        rec.last_heartbeat = rec.last_heartbeat.max(now);
        Ok(())
    }

    pub fn missed_heartbeats(&self, id: &TierId, now: u64) -> Result<u64, ManagerError> {
        let key = id.to_string();
        let rec = self.tiers.get(&key).ok_or(ManagerError::UnknownTier(key))?;
        Ok(now.saturating_sub(rec.last_heartbeat) / self.heartbeat_interval)
    }

    /// A tier is presumed crashed after the threshold of consecutive
    /// missed heartbeats. `live_claims` vetoes the presumption: an
    /// unexpired claim means the tier may merely be slow.
    pub fn is_crashed(&self, id: &TierId, now: u64, live_claims: bool) -> Result<bool, ManagerError> {
        Ok(self.missed_heartbeats(id, now)? >= self.missed_to_crash && !live_claims)
    }

    /// Decides what to do about a tier that missed a heartbeat.
    pub fn on_heartbeat_missed(
        &self,
        id: &TierId,
        policy: RecoveryPolicy,
        now: u64,
        live_claims: bool,
    ) -> Result<RecoveryAction, ManagerError> {
        let key = id.to_string();
        if !self.tiers.contains_key(&key) {
            return Err(ManagerError::UnknownTier(key));
        }
        if policy.requires_crash_confirmation() && !self.is_crashed(id, now, live_claims)? {
            return Ok(RecoveryAction::None);
        }
        match policy {
            RecoveryPolicy::LetItBe => Ok(RecoveryAction::None),
            RecoveryPolicy::TryNextUntilTheEnd
            | RecoveryPolicy::IfCrashThenTryNextUntilTheEnd => {
                let node_id = self.next_node(&id.node_id, false)?;
                Ok(RecoveryAction::Reassign { node_id })
            }
            RecoveryPolicy::TryNextAndWrapAround => {
                let node_id = self.next_node(&id.node_id, true)?;
                Ok(RecoveryAction::Reassign { node_id })
            }
            RecoveryPolicy::IfCrashThenRestart => {
                let node = self
                    .nodes
                    .get(&id.node_id)
                    .ok_or_else(|| ManagerError::UnknownNode(id.node_id.clone()))?;
                if !node.up {
                    return Err(ManagerError::NoCandidateNode);
                }
                Ok(RecoveryAction::Restart { node_id: id.node_id.clone() })
            }
        }
    }

    /// First up node after `current` in registration order; wraps to
    /// the front when `wrap` is set. The current node is never a
    /// candidate.
    fn next_node(&self, current: &str, wrap: bool) -> Result<String, ManagerError> {
        let pos = self
            .node_order
            .iter()
            .position(|n| n == current)
            .ok_or_else(|| ManagerError::UnknownNode(current.to_string()))?;
        let after = self.node_order[pos + 1..].iter();
        let candidates: Vec<&String> = if wrap {
            after.chain(self.node_order[..pos].iter()).collect()
        } else {
            after.collect()
        };
        candidates
            .into_iter()
            .find(|id| self.nodes[id.as_str()].up)
            .cloned()
            .ok_or(ManagerError::NoCandidateNode)
    }

    /// Runs an administrative action through the store as a system
    /// demand: put, claim, complete. The warehouse keeps the record.
    fn record_system_demand(
        &self,
        operation: &str,
        node_id: &str,
        tier: Option<&TierId>,
        now: u64,
    ) -> Result<(), ManagerError> {
        let mut params = Params::new();
        params.insert("node".into(), ParamValue::Str(node_id.to_string()));
        if let Some(tier) = tier {
            params.insert("tier".into(), ParamValue::Str(tier.to_string()));
        }
        params.insert("at".into(), ParamValue::Int(now as i64));
        let id = DemandId::generate(&mut *self.rng.lock().unwrap());
        let demand = Demand::new(id, DemandType::System, "GMT", operation, params, Vec::new());
        let sig = demand.signature;
        match self.store.put_demand(demand)? {
            PutOutcome::Enqueued => {}
            // Same action recorded before; nothing more to do.
            PutOutcome::AlreadyComputed(_) | PutOutcome::AlreadyInFlight => return Ok(()),
        }
        let pool = [operation.to_string()].into();
        if self.store.claim_pending("gmt", &pool, now)?.is_some() {
            self.store.store_result(sig, b"ok".to_vec(), "gmt", now)?;
        }
        Ok(())
    }
}
