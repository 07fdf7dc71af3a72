//! Output files of a finished run.
//!
//! | file                 | columns                                                     |
//! |----------------------|-------------------------------------------------------------|
//! | `summary.txt`        | human-readable tables                                       |
//! | `publish_hist.csv`   | `lo_ns,hi_ns,count,cumulative` (non-empty buckets)          |
//! | `e2e_hist.csv`       | same as `publish_hist.csv`                                  |
//! | `broker_rates.csv`   | `second,broker,published,acked,delivered,tx_bits`           |
//! | `decomposition.csv`  | `component,p50_ms`                                          |
//!
//! `events.log` is streamed by the run itself when tracing is on.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::metrics::{LatencyHistogram, SimReport};
use crate::time::format_duration;

pub const PUBLISH_HIST: &str = "publish_hist.csv";
pub const E2E_HIST: &str = "e2e_hist.csv";
pub const BROKER_RATES: &str = "broker_rates.csv";
pub const DECOMPOSITION: &str = "decomposition.csv";
pub const SUMMARY: &str = "summary.txt";
pub const EVENTS_LOG: &str = "events.log";

pub const CSV_FILES: [&str; 4] = [PUBLISH_HIST, E2E_HIST, BROKER_RATES, DECOMPOSITION];

pub fn histogram_csv(h: &LatencyHistogram) -> String {
    let mut o = String::from("lo_ns,hi_ns,count,cumulative\n");
    let mut cum = 0;
    for (lo, hi, n) in h.buckets() {
        cum += n;
        let _ = writeln!(o, "{lo},{hi},{n},{cum}");
    }
    o
}

pub fn broker_rates_csv(r: &SimReport) -> String {
    let mut o = String::from("second,broker,published,acked,delivered,tx_bits\n");
    for b in &r.brokers {
        for (s, x) in b.rates.buckets.iter().enumerate() {
            let _ = writeln!(o, "{s},{},{},{},{},{}", b.name, x.published, x.acked, x.delivered, x.tx_bits);
        }
    }
    o
}

pub fn decomposition_csv(r: &SimReport) -> String {
    let c = &r.components;
    let mut o = String::from("component,p50_ms\n");
    if r.publish.is_empty() {
        return o;
    }
    for (name, d) in c.rows() {
        let _ = writeln!(o, "{name},{:.4}", d.as_millis_f64());
    }
    let _ = writeln!(o, "component_sum,{:.4}", c.component_sum().as_millis_f64());
    let _ = writeln!(o, "total_p50,{:.4}", c.total_p50.as_millis_f64());
    let _ = writeln!(o, "residual,{:.4}", c.residual_ms());
    o
}

fn quantile_row(o: &mut String, label: &str, h: &LatencyHistogram) {
    if h.is_empty() {
        let _ = writeln!(o, "  {label:<8} no samples");
        return;
    }
    let _ = write!(o, "  {label:<8}");
    for q in [0.5, 0.95, 0.99, 0.999] {
        let _ = write!(o, " {:>10.3}", h.quantile_ms(q));
    }
    let max = h.max().map(|d| d.as_millis_f64()).unwrap_or(0.0);
    let _ = writeln!(o, " {max:>10.3}");
}

pub fn summary_text(r: &SimReport) -> String {
    let mut o = String::new();
    let c = &r.counters;
    let _ = writeln!(o, "scenario  {}", r.name);
    let _ = writeln!(o, "seed      {}", r.seed);
    let _ = writeln!(o, "duration  {}", format_duration(r.duration));
    let _ = writeln!(o, "events    {} (fingerprint {:016x})", r.events_fired, r.fingerprint);
    let _ = writeln!(o);
    let _ = writeln!(o, "messages");
    let _ = writeln!(o, "  published {:>12}", c.published);
    let _ = writeln!(o, "  acked     {:>12}", c.acked);
    let _ = writeln!(o, "  failed    {:>12}", c.failed);
    let _ = writeln!(o, "  in_flight {:>12}", c.in_flight);
    let _ = writeln!(o, "  delivered {:>12}", c.delivered);
    let _ = writeln!(o, "  ack rate  {:>12.1} msg/s", r.ack_rate());
    let _ = writeln!(o);
    let _ = writeln!(o, "latency (ms)        p50        p95        p99      p99.9        max");
    quantile_row(&mut o, "publish", &r.publish);
    quantile_row(&mut o, "e2e", &r.e2e);
    let _ = writeln!(o);
    let _ = writeln!(o, "publish p50 components (ms)");
    for (name, d) in r.components.rows() {
        let _ = writeln!(o, "  {name:<15} {:>9.3}", d.as_millis_f64());
    }
    let _ = writeln!(o, "  {:<15} {:>9.3}", "sum", r.components.component_sum().as_millis_f64());
    let _ = writeln!(o, "  {:<15} {:>9.3}", "total p50", r.components.total_p50.as_millis_f64());
    let _ = writeln!(o);
    let _ = writeln!(o, "journal");
    let _ = writeln!(o, "  fsyncs {} (contended {}), longest queue {} groups", r.fsyncs, r.contended_fsyncs, r.max_journal_queue);
    let _ = writeln!(o);
    let _ = writeln!(o, "block layers         windows  contention   system cpu");
    for l in &r.layers {
        let _ = writeln!(o, "  {:<18} {:>7} {:>11} {:>11.2}%", l.name, l.windows, format_duration(l.contention), l.system_cpu_pct);
    }
    let _ = writeln!(o);
    let longest = r.gc_pauses.iter().map(|p| p.length).max();
    let _ = writeln!(
        o,
        "gc pauses  {} (longest {})",
        r.gc_pauses.len(),
        longest.map(format_duration).unwrap_or_else(|| "-".into())
    );
    let _ = writeln!(o);
    let secs = r.duration.as_secs_f64().max(f64::MIN_POSITIVE);
    let _ = writeln!(o, "brokers              acked/s     tx Mbps   publish p50");
    for b in &r.brokers {
        let acked: u64 = b.rates.buckets.iter().map(|x| x.acked).sum();
        let p50 = if b.publish.is_empty() { 0.0 } else { b.publish.quantile_ms(0.5) };
        let _ = writeln!(o, "  {:<16} {:>9.1} {:>11.3} {:>13.3}", b.name, acked as f64 / secs, b.tx_bits as f64 / secs / 1e6, p50);
    }
    o
}

/// Writes the summary and CSV files into `dir`, creating it if needed.
pub fn emit_report(report: &SimReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let files = [
        (SUMMARY, summary_text(report)),
        (PUBLISH_HIST, histogram_csv(&report.publish)),
        (E2E_HIST, histogram_csv(&report.e2e)),
        (BROKER_RATES, broker_rates_csv(report)),
        (DECOMPOSITION, decomposition_csv(report)),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}
