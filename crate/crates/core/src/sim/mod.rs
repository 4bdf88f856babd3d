//! Deterministic discrete-event simulation of a deployment.

pub mod config;
pub mod engine;
pub mod report;
mod world;

use std::path::Path;

pub use config::{Action, LatencyModel, LoadConfig, ScenarioConfig, SimError, TimedAction};
pub use report::{
    percentile, AuthRecord, LatencyReport, LatencySample, ReportFormat, RevocationWindow,
    SimReport, StaleAcceptance,
};

use crate::audit::compare_logs;
use crate::trust::CacheMode;
use world::{LoadDriver, World, WorldParams};

/// Run a scenario to quiescence.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let max_client = cfg.client_latency.max_ms();
    let drain = cfg.poll_interval_ms
        + cfg.ttl_ms
        + 2 * cfg.max_node_latency()
        + cfg.settle_delay_ms
        + cfg.node_timeout_ms
        + 4 * max_client
        + 1;
    let params = WorldParams {
        seed: cfg.seed,
        n_nodes: cfg.n_nodes,
        quorum: cfg.quorum(),
        node_latency: (0..cfg.n_nodes).map(|i| cfg.node_latency(i)).collect(),
        client_latency: cfg.client_latency,
        poll_interval_ms: cfg.poll_interval_ms,
        ttl_ms: cfg.ttl_ms,
        cache_mode: cfg.cache_mode,
        audit: Some((cfg.audit_policy, cfg.settle_delay_ms)),
        node_timeout_ms: cfg.node_timeout_ms,
        gateway_service_ms: 0,
        node_service_ms: 0,
        tick_until: cfg.last_action_ms() + drain,
    };
    let mut world = World::new(params);
    world.schedule_steps(cfg.steps());
    let out = world.run();

    let bound = cfg.window_bound_ms();
    let mut violations = out.violations;
    for r in &out.revocations {
        if let Some(w) = r.window_ms {
            if w > bound {
                violations.push(format!(
                    "revocation of {} took {w} ms > bound {bound} ms",
                    r.subject
                ));
            }
        }
    }
    let unilateral = cfg.quorum() == 1;
    if unilateral {
        violations.push(format!(
            "quorum 1 of {} lets a single node decide alone",
            cfg.n_nodes
        ));
    }
    let logs: Vec<&[crate::audit::AuditEntry]> =
        out.audit_logs.iter().map(|l| l.entries()).collect();
    let audit = compare_logs(&logs);
    Ok(SimReport {
        seed: cfg.seed,
        n_nodes: cfg.n_nodes,
        quorum: cfg.quorum(),
        cache_mode: cfg.cache_mode,
        audit_policy: cfg.audit_policy,
        unilateral,
        window_bound_ms: bound,
        revocations: out.revocations,
        auths: out.auths,
        stale_acceptances: out.stale,
        audit,
        late_audit_events: out.audit_logs.iter().map(|l| l.late_events()).collect(),
        violations,
        end_time: out.end_time,
    })
}

/// Closed-loop load in virtual time. Latency is measured on the auth request,
/// from send to response.
pub fn run_load_sim(cfg: &LoadConfig) -> Result<LatencyReport, SimError> {
    cfg.validate()?;
    let params = WorldParams {
        seed: cfg.seed,
        n_nodes: cfg.n_nodes,
        quorum: cfg.quorum(),
        node_latency: vec![cfg.node_latency; cfg.n_nodes],
        client_latency: cfg.client_latency,
        poll_interval_ms: crate::trust::view::DEFAULT_POLL_INTERVAL_MS,
        ttl_ms: crate::trust::view::DEFAULT_TTL_MS,
        cache_mode: CacheMode::EventDriven,
        audit: None,
        node_timeout_ms: cfg.node_timeout_ms,
        gateway_service_ms: cfg.gateway_service_ms,
        node_service_ms: cfg.node_service_ms,
        tick_until: 0,
    };
    let mut world = World::new(params);
    world.start_load(LoadDriver {
        clients: cfg.clients,
        duration_ms: cfg.duration_ms,
        think_time_ms: cfg.think_time_ms,
    });
    let out = world.run();
    let samples = out
        .auths
        .iter()
        .filter(|a| a.completed_at <= cfg.duration_ms)
        .map(|a| LatencySample {
            client: a.subject.clone(),
            sent_at: a.sent_at,
            latency_ms: a.latency_ms,
            accepted: a.outcome == crate::gateway::Outcome::Accept,
        })
        .collect();
    Ok(LatencyReport::from_samples(
        samples,
        cfg.duration_ms,
        out.node_processed,
        out.gateway_busy_ms,
        out.node_busy_ms,
    ))
}

/// Reports that render as JSON or CSV.
pub trait Render {
    fn render(&self, format: ReportFormat) -> String;
}

impl Render for SimReport {
    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

impl Render for LatencyReport {
    fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

pub fn emit_report(report: &impl Render, format: ReportFormat, path: &Path) -> std::io::Result<()> {
    std::fs::write(path, report.render(format))
}

#[cfg(test)]
mod tests;
