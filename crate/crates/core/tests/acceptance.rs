//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero on any
//! failure outside `KNOWN_FAILURES`, and also when a known failure starts
//! passing so the list cannot go stale.
//! Run with `cargo test --release -p wf-simplex --test acceptance`.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use wf_simplex::suite::{self, guarded, Outcome, SuiteParams};

/// Checks that fail at desk scale, by criterion and check name.
/// Analysis lives in the project notes, not here.
const KNOWN_FAILURES: &[(usize, &str)] = &[(8, "theta=2.3562: C slope")];

struct Line {
    k: usize,
    outcome: Outcome,
    elapsed: Duration,
    budget: Option<Duration>,
    extra: Vec<(String, bool)>,
}

fn run(k: usize, id: &str, cat: &str, budget: Option<u64>, f: impl FnOnce() -> wf_simplex::Result<Outcome>) -> Line {
    let t0 = Instant::now();
    let outcome = guarded(id, cat, f);
    Line {
        k,
        outcome,
        elapsed: t0.elapsed(),
        budget: budget.map(Duration::from_secs),
        extra: Vec::new(),
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Multiplicity of `-m (m - 1) / 2` from the count of degree-`m` monomials
/// in `d` variables, merging the shared value of degrees 0 and 1.
fn expected_multiplicities(d: usize, top: u32) -> Vec<(i64, u64)> {
    let mut out: Vec<(i64, u64)> = Vec::new();
    for m in 0..=top {
        let v = -(i64::from(m) * (i64::from(m) - 1)) / 2;
        let c = binomial(u64::from(m) + d as u64 - 1, d as u64 - 1);
        match out.iter_mut().find(|(w, _)| *w == v) {
            Some(e) => e.1 += c,
            None => out.push((v, c)),
        }
    }
    out
}

fn main() {
    let p = SuiteParams::default();
    let mut lines = Vec::new();

    let mut l1 = run(1, "spectrum", "exact", Some(5), || suite::spectrum(&[1, 2, 3], p.max_degree));
    for (i, d) in [1usize, 2, 3].into_iter().enumerate() {
        let got: Vec<(i64, u64)> = l1.outcome.data[i]["eigs"]
            .as_array()
            .map(|a| a.iter().map(|e| (e[0].as_i64().unwrap_or(0), e[2].as_u64().unwrap_or(0))).collect())
            .unwrap_or_default();
        l1.extra.push((format!("d={d} binomial multiplicities"), got == expected_multiplicities(d, p.max_degree)));
    }
    lines.push(l1);
    lines.push(run(2, "markov", "exact", None, || suite::markov(64, p.delta)));
    lines.push(run(3, "face-commutation", "exact", None, || suite::face_check(&[2, 3], 5, 64)));
    lines.push(run(4, "chart-conjugation", "exact", Some(30), || suite::chart_check(&[2, 3], p.delta, 50, p.seed)));
    lines.push(run(5, "sector-resolvent", "numerical", None, || suite::sector(2, p.n, &[], p.seed)));
    lines.push(run(6, "smoothing-rate", "rate", None, || suite::smoothing(&[1, 2], 64, &p.times)));
    lines.push(run(7, "resolvent-gradient-rate", "rate", None, || suite::gradient_rates(2, p.n)));
    lines.push(run(8, "parametrix", "numerical", None, || suite::parametrix(2, p.n, p.delta, p.seed)));
    lines.push(run(9, "multiplier-resolvent", "numerical", None, || suite::multiplier(p.n, &p.multiplier, p.seed)));
    lines.push(run(10, "mc-compare", "stochastic", Some(120), || {
        suite::mc_compare(&[1, 2], p.population, p.replicates, p.seed)
    }));
    lines.push(run(11, "gradient-inequality", "numerical", None, || suite::gradient_inequality(200, 1.0, p.seed)));

    // an eigenvalue listed as a scan point must surface as a failure
    let mut probe = run(0, "sector-probe", "numerical", None, || suite::sector(1, 24, &[Complex64::new(-1.0, 0.0)], p.seed));
    let localized = probe.outcome.report.checks.iter().any(|c| c.name == "n=24: failures" && c.value == 1.0);
    probe.extra.push(("eigenvalue -1 recorded as a failure".into(), localized));
    let probe_ok = localized;

    let mut all = probe_ok;
    let mut known_seen = Vec::new();
    for l in &lines {
        let time_ok = l.budget.is_none_or(|b| l.elapsed <= b);
        let extra_ok = l.extra.iter().all(|(_, ok)| *ok);
        let failing: Vec<_> = l.outcome.report.checks.iter().filter(|c| !c.pass).collect();
        let unexpected = failing.iter().any(|c| !KNOWN_FAILURES.contains(&(l.k, c.name.as_str())));
        known_seen.extend(failing.iter().filter(|c| KNOWN_FAILURES.contains(&(l.k, c.name.as_str()))).map(|c| (l.k, c.name.clone())));
        let ok = failing.is_empty() && time_ok && extra_ok;
        all &= !unexpected && time_ok && extra_ok;
        let failed: Vec<String> = failing
            .iter()
            .map(|c| format!("{}={:.4e}", c.name, c.value))
            .chain(l.extra.iter().filter(|e| !e.1).map(|e| e.0.clone()))
            .collect();
        let tag = match (ok, unexpected || !time_ok || !extra_ok) {
            (true, _) => "PASS",
            (false, false) => "FAIL (known)",
            (false, true) => "FAIL",
        };
        println!(
            "{} criterion {:>2} {:<24} {:>3} checks {:>8.2}s{}{}",
            tag,
            l.k,
            l.outcome.report.id,
            l.outcome.report.checks.len() + l.extra.len(),
            l.elapsed.as_secs_f64(),
            l.budget.map_or(String::new(), |b| format!(" (budget {}s)", b.as_secs())),
            if failed.is_empty() { String::new() } else { format!("  failed: {}", failed.join(", ")) },
        );
        for note in &l.outcome.report.notes {
            println!("      note: {note}");
        }
    }
    for (k, name) in KNOWN_FAILURES {
        if !known_seen.iter().any(|(j, n)| j == k && n == name) {
            println!("STALE known failure no longer fails: criterion {k} {name}");
            all = false;
        }
    }
    println!("{} eigenvalue probe in sector scan", if probe_ok { "PASS" } else { "FAIL" });
    if !all {
        std::process::exit(1);
    }
}
