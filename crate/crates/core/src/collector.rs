//! The probing protocol: N concurrent spot requests per pool per cycle,
//! each canceled as soon as the provider starts provisioning it, so no
//! request ever reaches the running (billed) state.
//!
//! Failed submits are recorded as rejections with an error annotation
//! rather than retried — conservative accounting with a fixed N per cycle.
//! A failed cancel is escalated immediately: a node may be about to start
//! running, and that must never pass silently.

use crate::pool::PoolId;
use crate::trace::{CycleMeasurement, Outcome, ProbeRecord, SCHEMA_VERSION};
use std::collections::VecDeque;
use thiserror::Error;

/// How one request moves through the provider's provisioning lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    ProvisioningStarted,
    RejectedInsufficientCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RequestHandle(pub u64);

#[derive(Debug, Error)]
pub enum PortError {
    #[error("submit failed: {0}")]
    Submit(String),
    #[error("lifecycle wait failed: {0}")]
    Await(String),
    #[error("cancel failed: {0}")]
    Cancel(String),
    #[error("unknown request handle {0:?}")]
    UnknownHandle(RequestHandle),
    #[error("invalid lifecycle transition: {0}")]
    InvalidTransition(String),
}

/// Abstract provider interface the collector drives. Only the simulated
/// implementation ships; a real-provider adapter is an extension seam.
///
/// `cancel` may only be called after `await_lifecycle` returned
/// `ProvisioningStarted`; a canceled request never reaches a running state.
pub trait ProviderPort {
    fn submit_request(&mut self, pool: &PoolId, cycle: u32) -> Result<RequestHandle, PortError>;
    fn await_lifecycle(&mut self, handle: RequestHandle) -> Result<Lifecycle, PortError>;
    fn cancel(&mut self, handle: RequestHandle) -> Result<(), PortError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    pub max_requests_per_window: u32,
    pub window_seconds: u32,
}

/// Sliding-window limiter over simulated time. `issue_at` returns the
/// earliest time >= the requested one at which a request may be issued
/// without ever exceeding the limit in any window placement, and logs it.
#[derive(Debug)]
pub struct RateLimiter {
    limit: RateLimit,
    recent: VecDeque<i64>,
    log: Vec<i64>,
    last_issued: i64,
}

impl RateLimiter {
    pub fn new(limit: RateLimit) -> Self {
        Self {
            limit,
            recent: VecDeque::new(),
            log: Vec::new(),
            last_issued: i64::MIN,
        }
    }

    pub fn issue_at(&mut self, earliest: i64) -> i64 {
        let window = self.limit.window_seconds as i64;
        let max = self.limit.max_requests_per_window as usize;
        // Issue times are monotone regardless of what callers pass in;
        // the deque stays sorted and window counts stay correct.
        let mut t = earliest.max(self.last_issued);
        loop {
            while let Some(front) = self.recent.front() {
                if *front <= t - window {
                    self.recent.pop_front();
                } else {
                    break;
                }
            }
            if self.recent.len() < max {
                break;
            }
            // Wait until the oldest in-window request falls out.
            t = self.recent.front().unwrap() + window;
        }
        self.recent.push_back(t);
        self.log.push(t);
        self.last_issued = t;
        t
    }

    /// Full issue-time log, for rate-limit compliance checks.
    pub fn log(&self) -> &[i64] {
        &self.log
    }
}

#[derive(Debug, Error)]
pub enum CollectError {
    #[error(
        "infeasible: {pools} pools x {n} requests needs {needed_s} s per cycle \
         under {max} per {window_s} s, but the interval is {interval_s} s"
    )]
    Infeasible {
        pools: usize,
        n: u32,
        needed_s: i64,
        max: u32,
        window_s: u32,
        interval_s: i64,
    },
    /// A cancel failed after provisioning was accepted: the request may
    /// reach the running state, i.e. a leaked node.
    #[error("cancel leak for pool {pool} cycle {cycle} request {request_index}: {source}")]
    CancelLeak {
        pool: PoolId,
        cycle: u32,
        request_index: u32,
        #[source]
        source: PortError,
    },
    #[error("requests per cycle must be >= 1")]
    ZeroRequests,
    #[error(transparent)]
    Trace(#[from] crate::trace::TraceError),
}

/// Result of probing one pool for one cycle.
#[derive(Debug, Clone)]
pub struct CycleCollection {
    pub measurement: CycleMeasurement,
    pub probes: Vec<ProbeRecord>,
    /// Simulated time at which the last request of the cycle was issued.
    pub last_issue_s: i64,
}

/// Submits `n` concurrent requests for the pool, throttled by the limiter,
/// cancels each accepted one, and returns exactly `n` probe records plus
/// the aggregated measurement. Record timestamps stay cycle-aligned.
pub fn collect_cycle(
    port: &mut dyn ProviderPort,
    pool: &PoolId,
    n: u32,
    limiter: &mut RateLimiter,
    cycle: u32,
    interval_min: u32,
    cycle_start_s: i64,
) -> Result<CycleCollection, CollectError> {
    if n == 0 {
        return Err(CollectError::ZeroRequests);
    }
    let ts = cycle as i64 * interval_min as i64 * 60;
    let mut probes = Vec::with_capacity(n as usize);
    let mut successes = 0u32;
    let mut last_issue = cycle_start_s;
    for request_index in 0..n {
        last_issue = limiter.issue_at(last_issue.max(cycle_start_s));
        let (outcome, error) = match port.submit_request(pool, cycle) {
            Err(e) => (Outcome::Rejected, Some(e.to_string())),
            Ok(handle) => match port.await_lifecycle(handle) {
                Err(e) => (Outcome::Rejected, Some(e.to_string())),
                Ok(Lifecycle::RejectedInsufficientCapacity) => (Outcome::Rejected, None),
                Ok(Lifecycle::ProvisioningStarted) => {
                    port.cancel(handle).map_err(|source| CollectError::CancelLeak {
                        pool: pool.clone(),
                        cycle,
                        request_index,
                        source,
                    })?;
                    (Outcome::Accepted, None)
                }
            },
        };
        if outcome == Outcome::Accepted {
            successes += 1;
        }
        probes.push(ProbeRecord {
            v: SCHEMA_VERSION,
            ts,
            cycle,
            pool: pool.clone(),
            request_index,
            outcome,
            error,
        });
    }
    Ok(CycleCollection {
        measurement: CycleMeasurement {
            v: SCHEMA_VERSION,
            cycle,
            pool: pool.clone(),
            successes,
            requested: n,
            interval_min,
        },
        probes,
        last_issue_s: last_issue,
    })
}

/// Worst-case seconds needed to issue `k` requests under the limit.
fn time_to_issue(k: u64, limit: &RateLimit) -> i64 {
    if k == 0 {
        return 0;
    }
    let batches = k.div_ceil(limit.max_requests_per_window as u64);
    (batches as i64 - 1) * limit.window_seconds as i64
}

/// Rejects configurations whose per-cycle request volume cannot fit the
/// rate limit within one collection interval.
pub fn check_feasible(
    pools: usize,
    n: u32,
    limit: &RateLimit,
    interval_min: u32,
) -> Result<(), CollectError> {
    let interval_s = interval_min as i64 * 60;
    let needed_s = time_to_issue(pools as u64 * n as u64, limit);
    if needed_s >= interval_s {
        return Err(CollectError::Infeasible {
            pools,
            n,
            needed_s,
            max: limit.max_requests_per_window,
            window_s: limit.window_seconds,
            interval_s,
        });
    }
    Ok(())
}

/// All probe/cycle records of a full collection run.
#[derive(Debug, Clone)]
pub struct CollectRun {
    pub probes: Vec<ProbeRecord>,
    pub cycles: Vec<CycleMeasurement>,
    pub request_log: Vec<i64>,
}

/// Runs the collection loop over every pool for every cycle. Per-pool cycle
/// files come out gap-free; when the port is the simulator this produces
/// exactly the probe/cycle records of a scenario run with the same seed.
pub fn collect_run(
    port: &mut dyn ProviderPort,
    pools: &[PoolId],
    duration_min: u32,
    interval_min: u32,
    n: u32,
    limit: RateLimit,
) -> Result<CollectRun, CollectError> {
    check_feasible(pools.len(), n, &limit, interval_min)?;
    let total_cycles = duration_min / interval_min;
    let mut limiter = RateLimiter::new(limit);
    let mut out = CollectRun {
        probes: Vec::new(),
        cycles: Vec::new(),
        request_log: Vec::new(),
    };
    for cycle in 1..=total_cycles {
        let cycle_start = (cycle as i64 - 1) * interval_min as i64 * 60;
        for pool in pools {
            let collected =
                collect_cycle(port, pool, n, &mut limiter, cycle, interval_min, cycle_start)?;
            out.probes.extend(collected.probes);
            out.cycles.push(collected.measurement);
        }
    }
    out.request_log = limiter.log().to_vec();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{default_scenario, run_scenario_records, SimPort};

    fn limiter(max: u32, window: u32) -> RateLimiter {
        RateLimiter::new(RateLimit {
            max_requests_per_window: max,
            window_seconds: window,
        })
    }

    /// Brute-force sliding-window oracle: max count over every window
    /// placement at integer starts.
    fn max_window_count(log: &[i64], window: i64) -> usize {
        let mut max_count = 0;
        for &s in log {
            for start in [s - window + 1, s] {
                let count = log.iter().filter(|&&t| t >= start && t < start + window).count();
                max_count = max_count.max(count);
            }
        }
        max_count
    }

    #[test]
    fn full_acceptance_issues_one_cancel_per_accept() {
        let configs = default_scenario(1);
        let mut cfg = configs[0].clone();
        cfg.capacity_up = 30;
        cfg.probe_overshoot_prob = 0.0;
        let mut port = SimPort::new(&[cfg.clone()], 3, 10, 9).unwrap();
        let mut lim = limiter(1000, 180);
        let got = collect_cycle(&mut port, &cfg.pool, 10, &mut lim, 1, 3, 0).unwrap();
        assert_eq!(got.measurement.successes, 10);
        assert_eq!(
            got.probes.iter().filter(|p| p.outcome == Outcome::Accepted).count(),
            10
        );
        assert_eq!(port.cancels_issued(), 10);
        assert_eq!(port.collector_residency(), 0);
    }

    #[test]
    fn zero_headroom_yields_zero_cancels() {
        let configs = default_scenario(1);
        let mut cfg = configs[0].clone();
        cfg.capacity_up = 10; // tenant fills the whole pool
        cfg.probe_overshoot_prob = 0.0;
        cfg.foreign_mean = 0.0;
        cfg.foreign_jitter = 0.0;
        let mut port = SimPort::new(&[cfg.clone()], 3, 10, 9).unwrap();
        let mut lim = limiter(1000, 180);
        let got = collect_cycle(&mut port, &cfg.pool, 10, &mut lim, 1, 3, 0).unwrap();
        assert_eq!(got.measurement.successes, 0);
        assert_eq!(port.cancels_issued(), 0);
    }

    #[test]
    fn rate_limit_throttles_and_never_exceeds() {
        // 5 per 60 s, n=10: all ten complete, elapsed simulated time >= 60 s.
        let configs = default_scenario(1);
        let cfg = configs[0].clone();
        let mut port = SimPort::new(&[cfg.clone()], 3, 10, 9).unwrap();
        let mut lim = limiter(5, 60);
        let got = collect_cycle(&mut port, &cfg.pool, 10, &mut lim, 1, 3, 0).unwrap();
        assert_eq!(got.probes.len(), 10);
        assert!(got.last_issue_s >= 60, "elapsed {} s", got.last_issue_s);
        assert!(max_window_count(lim.log(), 60) <= 5);
    }

    #[test]
    fn rate_limiter_log_matches_brute_force_on_random_loads() {
        let mut lim = limiter(7, 30);
        let mut t = 0;
        for i in 0..200 {
            t += (i % 5) as i64;
            lim.issue_at(t);
        }
        assert!(max_window_count(lim.log(), 30) <= 7);
    }

    #[test]
    fn one_pool_four_cycles_counts() {
        let configs = default_scenario(1);
        let cfg = configs[0].clone();
        let mut port = SimPort::new(&[cfg.clone()], 3, 10, 9).unwrap();
        let run = collect_run(
            &mut port,
            &[cfg.pool.clone()],
            12,
            3,
            10,
            RateLimit { max_requests_per_window: 1000, window_seconds: 180 },
        )
        .unwrap();
        assert_eq!(run.probes.len(), 40);
        assert_eq!(run.cycles.len(), 4);
    }

    #[test]
    fn feasibility_matches_the_worked_example() {
        // 47 pools x 10 requests at a 3-minute interval: feasible only when
        // the limit admits 470 requests per 3-minute window.
        let ok = RateLimit { max_requests_per_window: 470, window_seconds: 180 };
        assert!(check_feasible(47, 10, &ok, 3).is_ok());
        let too_small = RateLimit { max_requests_per_window: 469, window_seconds: 180 };
        assert!(check_feasible(47, 10, &too_small, 3).is_err());
    }

    #[test]
    fn collector_over_simulator_equals_scenario_runner() {
        let configs = default_scenario(4);
        let seed = 1234;
        let scenario = run_scenario_records(&configs, 60, 3, 10, seed).unwrap();

        let mut port = SimPort::new(&configs, 3, 10, seed).unwrap();
        let pools: Vec<_> = configs.iter().map(|c| c.pool.clone()).collect();
        let run = collect_run(
            &mut port,
            &pools,
            60,
            3,
            10,
            RateLimit { max_requests_per_window: 10_000, window_seconds: 180 },
        )
        .unwrap();

        assert_eq!(run.cycles, scenario.cycles);
        assert_eq!(run.probes, scenario.probes);
        // The port accumulated the same running/interruption traces.
        let (running, interruptions) = port.finish(60 / 3);
        assert_eq!(running, scenario.running);
        assert_eq!(interruptions, scenario.interruptions);
    }

    #[test]
    fn count_conservation_accepted_equals_successes() {
        let configs = default_scenario(3);
        let mut port = SimPort::new(&configs, 3, 10, 5).unwrap();
        let pools: Vec<_> = configs.iter().map(|c| c.pool.clone()).collect();
        let run = collect_run(
            &mut port,
            &pools,
            30,
            3,
            10,
            RateLimit { max_requests_per_window: 10_000, window_seconds: 180 },
        )
        .unwrap();
        for m in &run.cycles {
            let accepted = run
                .probes
                .iter()
                .filter(|p| {
                    p.pool == m.pool && p.cycle == m.cycle && p.outcome == Outcome::Accepted
                })
                .count() as u32;
            assert_eq!(accepted, m.successes);
        }
    }

    /// Port wrapper that injects failures, for the error paths.
    struct FlakyPort<'a> {
        inner: &'a mut SimPort,
        fail_submit_at: Option<u64>,
        fail_cancel_at: Option<u64>,
        submits: u64,
        cancels: u64,
    }

    impl ProviderPort for FlakyPort<'_> {
        fn submit_request(&mut self, pool: &PoolId, cycle: u32) -> Result<RequestHandle, PortError> {
            self.submits += 1;
            if Some(self.submits) == self.fail_submit_at {
                return Err(PortError::Submit("injected transient API failure".into()));
            }
            self.inner.submit_request(pool, cycle)
        }

        fn await_lifecycle(&mut self, handle: RequestHandle) -> Result<Lifecycle, PortError> {
            self.inner.await_lifecycle(handle)
        }

        fn cancel(&mut self, handle: RequestHandle) -> Result<(), PortError> {
            self.cancels += 1;
            if Some(self.cancels) == self.fail_cancel_at {
                return Err(PortError::Cancel("injected cancel failure".into()));
            }
            self.inner.cancel(handle)
        }
    }

    #[test]
    fn submit_failure_recorded_as_rejected_with_annotation() {
        let configs = default_scenario(1);
        let cfg = configs[0].clone();
        let mut sim_port = SimPort::new(&[cfg.clone()], 3, 10, 9).unwrap();
        let mut port = FlakyPort {
            inner: &mut sim_port,
            fail_submit_at: Some(3),
            fail_cancel_at: None,
            submits: 0,
            cancels: 0,
        };
        let mut lim = limiter(1000, 180);
        let got = collect_cycle(&mut port, &cfg.pool, 10, &mut lim, 1, 3, 0).unwrap();
        assert_eq!(got.probes.len(), 10);
        let flagged: Vec<_> = got.probes.iter().filter(|p| p.error.is_some()).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].outcome, Outcome::Rejected);
        assert_eq!(flagged[0].request_index, 2);
    }

    #[test]
    fn cancel_failure_escalates_as_leak() {
        let configs = default_scenario(1);
        let mut cfg = configs[0].clone();
        cfg.capacity_up = 30; // plenty of headroom so requests get accepted
        let mut sim_port = SimPort::new(&[cfg.clone()], 3, 10, 9).unwrap();
        let mut port = FlakyPort {
            inner: &mut sim_port,
            fail_submit_at: None,
            fail_cancel_at: Some(2),
            submits: 0,
            cancels: 0,
        };
        let mut lim = limiter(1000, 180);
        let err = collect_cycle(&mut port, &cfg.pool, 10, &mut lim, 1, 3, 0).unwrap_err();
        assert!(matches!(err, CollectError::CancelLeak { .. }), "{err}");
    }
}
