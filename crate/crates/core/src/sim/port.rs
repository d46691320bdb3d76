//! Simulated provider port: the collector-facing adapter over [`Simulation`].
//!
//! Requests answered per the pool's probe headroom at the request's cycle;
//! the first `S_t` requests of a (pool, cycle) enter provisioning, the rest
//! are rejected. An accepted request that is never canceled counts as
//! collector residency — a node the collector would be paying for.

use super::{SimError, Simulation};
use crate::collector::{Lifecycle, PortError, ProviderPort, RequestHandle};
use crate::pool::PoolId;
use crate::sim::PoolConfig;
use crate::trace::{InterruptionEvent, RunningRecord};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HandleState {
    Submitted { accepted: bool },
    Provisioning,
    Closed,
}

pub struct SimPort {
    sim: Simulation,
    handles: HashMap<u64, HandleState>,
    next_handle: u64,
    next_request_index: HashMap<(usize, u32), u32>,
    cancels_issued: u64,
}

impl SimPort {
    pub fn new(
        configs: &[PoolConfig],
        interval_min: u32,
        n_probe: u32,
        seed: u64,
    ) -> Result<Self, SimError> {
        Ok(Self {
            sim: Simulation::new(configs, interval_min, n_probe, seed)?,
            handles: HashMap::new(),
            next_handle: 0,
            next_request_index: HashMap::new(),
            cancels_issued: 0,
        })
    }

    /// Accepted requests currently provisioning that were never canceled:
    /// nodes the provider would hand to the collector. Must be zero after
    /// every properly collected cycle.
    pub fn collector_residency(&self) -> usize {
        self.handles
            .values()
            .filter(|s| matches!(s, HandleState::Provisioning))
            .count()
    }

    pub fn cancels_issued(&self) -> u64 {
        self.cancels_issued
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    /// Advances every pool to `final_cycle` and returns the accumulated
    /// running/interruption traces merged in scenario order.
    pub fn finish(&mut self, final_cycle: u32) -> (Vec<RunningRecord>, Vec<InterruptionEvent>) {
        let n_pools = self.sim.pools().len();
        for idx in 0..n_pools {
            let _ = self.sim.probe_count(idx, final_cycle); // ensures advance
        }
        let mut running = Vec::new();
        for c in 0..final_cycle as usize {
            for idx in 0..n_pools {
                let (r, _) = self.sim.outputs(idx);
                if let Some(rec) = r.get(c) {
                    running.push(rec.clone());
                }
            }
        }
        let mut interruptions: Vec<(usize, InterruptionEvent)> = Vec::new();
        for idx in 0..n_pools {
            let (_, ints) = self.sim.outputs(idx);
            interruptions.extend(ints.iter().cloned().map(|e| (idx, e)));
        }
        interruptions.sort_by(|(ia, a), (ib, b)| {
            (a.ts, *ia, &a.node_id).cmp(&(b.ts, *ib, &b.node_id))
        });
        (running, interruptions.into_iter().map(|(_, e)| e).collect())
    }
}

impl ProviderPort for SimPort {
    fn submit_request(&mut self, pool: &PoolId, cycle: u32) -> Result<RequestHandle, PortError> {
        let idx = self
            .sim
            .pool_index(pool)
            .ok_or_else(|| PortError::Submit(format!("unknown pool {pool}")))?;
        let s = self.sim.probe_count(idx, cycle);
        let counter = self.next_request_index.entry((idx, cycle)).or_insert(0);
        let request_index = *counter;
        *counter += 1;
        let accepted = request_index < s;
        let handle = RequestHandle(self.next_handle);
        self.next_handle += 1;
        self.handles.insert(handle.0, HandleState::Submitted { accepted });
        Ok(handle)
    }

    fn await_lifecycle(&mut self, handle: RequestHandle) -> Result<Lifecycle, PortError> {
        match self.handles.get_mut(&handle.0) {
            None => Err(PortError::UnknownHandle(handle)),
            Some(state @ HandleState::Submitted { accepted: true }) => {
                *state = HandleState::Provisioning;
                Ok(Lifecycle::ProvisioningStarted)
            }
            Some(state @ HandleState::Submitted { accepted: false }) => {
                *state = HandleState::Closed;
                Ok(Lifecycle::RejectedInsufficientCapacity)
            }
            Some(other) => Err(PortError::InvalidTransition(format!(
                "await_lifecycle on {other:?}"
            ))),
        }
    }

    fn cancel(&mut self, handle: RequestHandle) -> Result<(), PortError> {
        self.cancels_issued += 1;
        match self.handles.get_mut(&handle.0) {
            None => Err(PortError::UnknownHandle(handle)),
            Some(state @ HandleState::Provisioning) => {
                *state = HandleState::Closed;
                Ok(())
            }
            Some(other) => Err(PortError::InvalidTransition(format!("cancel on {other:?}"))),
        }
    }
}
