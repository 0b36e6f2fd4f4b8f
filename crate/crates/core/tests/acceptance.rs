//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Every criterion that depends on q runs
//! under both the default prime and 2^61 - 1.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use sparse_secagg::crypto::{Seed, ShamirScheme, Share};
use sparse_secagg::error::Error;
use sparse_secagg::experiments::{run_experiment, ExperimentKind, ExperimentSpec, Findings};
use sparse_secagg::field::{FieldModulus, PrimeField, DEFAULT_MODULUS};
use sparse_secagg::fl_sim::{TaskSpec, TrainingConfig};
use sparse_secagg::masking::selection_probability;
use sparse_secagg::protocol::{run_round, Cohort, ProtocolConfig, RoundInput};

const ALT_MODULUS: u64 = (1 << 61) - 1;

const EXACTNESS_MIN_ROUNDS: usize = 100;
const EXACTNESS_BUDGET: Duration = Duration::from_secs(120);
const COMPRESSION_TO_P: f64 = 0.02;
const P_TO_ALPHA: f64 = 0.05;
const CONTRIBUTORS_TO_PREDICTION: f64 = 0.05;
const PRIVACY_BUDGET: Duration = Duration::from_secs(60);
const UNBIASED_SE: f64 = 4.0;
const UNBIASED_COVERAGE: f64 = 0.99;
const GAP_REDUCTION: f64 = 100.0;
const ENVELOPE_FROM: usize = 50;
const ENVELOPE_SE: f64 = 3.0;
const FEDAVG_FACTOR: f64 = 2.0;
const CONVERGENCE_BUDGET: Duration = Duration::from_secs(300);
const COMMUNICATION_TO_PREDICTION: f64 = 0.05;
const MIN_REDUCTION: f64 = 5.0;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new() -> Self {
        Verdict {
            passed: true,
            detail: String::new(),
        }
    }

    fn check(&mut self, ok: bool, detail: impl Into<String>) {
        self.passed &= ok;
        if !self.detail.is_empty() {
            self.detail.push_str("; ");
        }
        self.detail.push_str(&detail.into());
        if !ok {
            self.detail.push_str(" [failed]");
        }
    }
}

fn moduli() -> [(&'static str, FieldModulus); 2] {
    [
        ("2^31-1", FieldModulus::new(DEFAULT_MODULUS).unwrap()),
        ("2^61-1", FieldModulus::new(ALT_MODULUS).unwrap()),
    ]
}

fn spec(kind: ExperimentKind, protocol: ProtocolConfig, training: TrainingConfig) -> ExperimentSpec {
    ExperimentSpec {
        seed: 1,
        ..ExperimentSpec::new(kind, protocol, training)
    }
}

fn exactness(v: &mut Verdict) {
    for (name, q) in moduli() {
        let start = Instant::now();
        let (mut rounds, mut exact) = (0, 0);
        let mut all_counts = true;
        for users in [2u32, 3, 4, 8, 16, 32] {
            for dim in [1usize, 16, 256, 1024] {
                for alpha in [0.05, 0.3, 1.0] {
                    let protocol = ProtocolConfig {
                        users,
                        dim,
                        alpha,
                        q,
                        ..Default::default()
                    };
                    let max_dropped = (users as usize).div_ceil(2) - 1;
                    let s = ExperimentSpec {
                        rounds: max_dropped + 1,
                        seed: (users as u64) << 32 | (dim as u64) << 8 | (alpha * 100.0) as u64,
                        ..ExperimentSpec::new(ExperimentKind::Exactness, protocol, TrainingConfig::default())
                    };
                    let out = run_experiment(&s).unwrap();
                    let Findings::Exactness(r) = out.findings else {
                        unreachable!()
                    };
                    rounds += r.rounds;
                    exact += r.exact_rounds;
                    all_counts &= r.dropout_counts == (0..=max_dropped).collect::<Vec<_>>();
                }
            }
        }
        let elapsed = start.elapsed();
        v.check(
            exact == rounds && rounds >= EXACTNESS_MIN_ROUNDS && all_counts,
            format!("q={name}: {exact}/{rounds} rounds exact, every dropout count covered: {all_counts}"),
        );
        v.check(elapsed < EXACTNESS_BUDGET, format!("{:.1}s", elapsed.as_secs_f64()));
    }
}

fn threshold(v: &mut Verdict) {
    for (name, q) in moduli() {
        for users in [3u32, 4, 8, 9, 16] {
            let cfg = ProtocolConfig {
                users,
                dim: 64,
                alpha: 0.5,
                q,
                ..Default::default()
            };
            let cohort = Cohort::setup(&cfg, &Seed::from_u64(users as u64)).unwrap();
            let gradients: Vec<Vec<f64>> = (0..users)
                .map(|i| (0..64).map(|l| ((i as f64 + 1.0) * l as f64).sin()).collect())
                .collect();
            let weights = vec![1.0 / users as f64; users as usize];
            let input = RoundInput {
                gradients: &gradients,
                weights: &weights,
                clip: 1.0,
            };
            let need = users as usize / 2 + 1;
            let at_threshold: Vec<u32> = (need as u32..users).collect();
            let ok = run_round(&cohort, 0, &input, &at_threshold)
                .map(|t| t.exact())
                .unwrap_or(false);
            let below: Vec<u32> = (need as u32 - 1..users).collect();
            let fails = matches!(
                run_round(&cohort, 1, &input, &below),
                Err(Error::TooManyDropouts { .. } | Error::InsufficientShares { .. })
            );
            v.check(
                ok && fails,
                format!("q={name} N={users}: {need} survivors exact, {} refused", need - 1),
            );
        }
    }
}

fn compression(v: &mut Verdict) {
    for (name, q) in moduli() {
        let protocol = ProtocolConfig {
            users: 50,
            dim: 100_000,
            alpha: 0.1,
            q,
            ..Default::default()
        };
        let s = ExperimentSpec {
            rounds: 2,
            ..spec(ExperimentKind::Compression, protocol, TrainingConfig::default())
        };
        let Findings::Compression(r) = run_experiment(&s).unwrap().findings else {
            unreachable!()
        };
        let p = 1.0 - (1.0 - 0.1f64 / 49.0).powi(49);
        let gap = (r.mean_ratio - p).abs() / p;
        let p_gap = (p - 0.1).abs() / 0.1;
        v.check(
            gap < COMPRESSION_TO_P && p_gap < P_TO_ALPHA,
            format!(
                "q={name}: mean |U_i|/d {:.6} vs p {p:.6} ({gap:.5}), |p-alpha|/alpha {p_gap:.4}",
                r.mean_ratio
            ),
        );
    }
}

fn privacy(v: &mut Verdict) {
    for (name, q) in moduli() {
        let start = Instant::now();
        let protocol = ProtocolConfig {
            users: 200,
            dim: 10_000,
            alpha: 0.5,
            theta: 0.1,
            gamma: 0.2,
            q,
            ..Default::default()
        };
        let s = ExperimentSpec {
            rounds: 20,
            ..spec(ExperimentKind::Privacy, protocol, TrainingConfig::default())
        };
        let Findings::Privacy(r) = run_experiment(&s).unwrap().findings else {
            unreachable!()
        };
        let elapsed = start.elapsed();
        let predicted = selection_probability(0.5, 200) * 0.9 * 0.8 * 200.0;
        let t = (1.0 - (-0.5f64).exp()) * 0.9 * 0.8 * 200.0;
        let err = (r.mean_honest - predicted).abs() / predicted;
        let toward = r
            .scaling
            .windows(2)
            .all(|w| (w[1].1 - 1.0).abs() < (w[0].1 - 1.0).abs());
        v.check(
            err < CONTRIBUTORS_TO_PREDICTION && (r.asymptotic - t).abs() < 1e-9,
            format!(
                "q={name}: mean honest {:.3} vs {predicted:.3} ({err:.5}), T = {t:.3}",
                r.mean_honest
            ),
        );
        let last = r.scaling.last().map(|s| s.1).unwrap_or(f64::NAN);
        v.check(
            toward,
            format!("finite/T {:.5} -> {last:.5} as N doubles", r.scaling[0].1),
        );
        v.check(elapsed < PRIVACY_BUDGET, format!("{:.1}s", elapsed.as_secs_f64()));
    }
}

fn monte_carlo_spec(kind: ExperimentKind, q: FieldModulus) -> ExperimentSpec {
    let protocol = ProtocolConfig {
        users: 8,
        dim: 64,
        alpha: 0.3,
        theta: 0.2,
        level: 1 << 10,
        q,
        ..Default::default()
    };
    let training = TrainingConfig {
        task: TaskSpec {
            samples_min: 80,
            samples_max: 160,
            ..Default::default()
        },
        ..Default::default()
    };
    ExperimentSpec {
        trials: 10_000,
        ..spec(kind, protocol, training)
    }
}

fn unbiasedness(v: &mut Verdict) {
    for (name, q) in moduli() {
        let out = run_experiment(&monte_carlo_spec(ExperimentKind::Unbiasedness, q)).unwrap();
        let Findings::MonteCarlo { summary, .. } = out.findings else {
            unreachable!()
        };
        let within = summary
            .mean
            .iter()
            .zip(&summary.target)
            .zip(&summary.std_err)
            .filter(|((m, t), se)| (*m - *t).abs() <= UNBIASED_SE * **se)
            .count();
        let coverage = within as f64 / summary.mean.len() as f64;
        v.check(
            coverage >= UNBIASED_COVERAGE,
            format!(
                "q={name}: {within}/{} coordinates within {UNBIASED_SE} SE",
                summary.mean.len()
            ),
        );
    }
}

fn variance(v: &mut Verdict) {
    for (name, q) in moduli() {
        let out = run_experiment(&monte_carlo_spec(ExperimentKind::Variance, q)).unwrap();
        let Findings::MonteCarlo { summary, bound } = out.findings else {
            unreachable!()
        };
        v.check(
            summary.mean_sq_deviation <= bound,
            format!(
                "q={name}: E|w-v|^2 {:.4e} <= bound {bound:.4e}",
                summary.mean_sq_deviation
            ),
        );
    }
}

fn convergence_spec(alpha: f64, theta: f64, q: FieldModulus) -> ExperimentSpec {
    let protocol = ProtocolConfig {
        users: 10,
        dim: 20,
        alpha,
        theta,
        level: 1 << 20,
        q,
        ..Default::default()
    };
    let training = TrainingConfig {
        local_steps: 5,
        rounds: 500,
        mu: 0.5,
        smoothness: 2.0,
        batch: 4,
        grad_clip: 20.0,
        task: TaskSpec {
            heterogeneity: 0.1,
            ..Default::default()
        },
    };
    ExperimentSpec {
        replicates: 20,
        envelope_from: ENVELOPE_FROM,
        ..spec(ExperimentKind::Convergence, protocol, training)
    }
}

fn convergence(v: &mut Verdict) {
    for (name, q) in moduli() {
        let start = Instant::now();
        for (alpha, theta) in [(0.5, 0.1), (1.0, 0.0)] {
            let Findings::Convergence(r) = run_experiment(&convergence_spec(alpha, theta, q)).unwrap().findings else {
                unreachable!()
            };
            v.check(
                r.reduction() >= GAP_REDUCTION,
                format!(
                    "q={name} alpha={alpha} theta={theta}: gap reduced {:.0}x",
                    r.reduction()
                ),
            );
            v.check(
                r.envelope.worst_adjusted <= 1.0 && r.envelope.from == ENVELOPE_FROM,
                format!(
                    "envelope worst ratio {:.3}, {:.3} after {ENVELOPE_SE} SE",
                    r.envelope.worst_ratio, r.envelope.worst_adjusted
                ),
            );
            if alpha == 1.0 {
                let ratio = r.fedavg_ratio();
                v.check(
                    (1.0 / FEDAVG_FACTOR..=FEDAVG_FACTOR).contains(&ratio),
                    format!("final gap / FedAvg {ratio:.3}"),
                );
            }
        }
        let elapsed = start.elapsed();
        v.check(elapsed < CONVERGENCE_BUDGET, format!("{:.1}s", elapsed.as_secs_f64()));
    }
}

fn communication(v: &mut Verdict) {
    for (name, q) in moduli() {
        let protocol = ProtocolConfig {
            users: 50,
            dim: 10_000,
            alpha: 0.1,
            q,
            ..Default::default()
        };
        let s = ExperimentSpec {
            rounds: 5,
            ..spec(ExperimentKind::Communication, protocol, TrainingConfig::default())
        };
        let Findings::Communication(r) = run_experiment(&s).unwrap().findings else {
            unreachable!()
        };
        let p = selection_probability(0.1, 50);
        let predicted = 8.0 * 10_000.0 / (p * 10_000.0 * 12.0);
        let err = (r.measured_reduction - predicted).abs() / predicted;
        v.check(
            err < COMMUNICATION_TO_PREDICTION && r.measured_reduction > MIN_REDUCTION,
            format!(
                "q={name}: measured {:.3}x vs predicted {predicted:.3}x ({err:.4})",
                r.measured_reduction
            ),
        );
    }
}

fn shamir_hiding(v: &mut Verdict) {
    const Q: u64 = 257;
    let field = PrimeField::new(FieldModulus::new(Q).unwrap());
    let scheme = ShamirScheme::with_limb_bits(field, 6, 3, 8).unwrap();
    let secret = Seed::from_u64(0x5eed);
    let mut words =
        sparse_secagg::crypto::PrgStream::new(&Seed::from_u64(9), sparse_secagg::crypto::DomainTag::Sharing, 0);
    let shares = scheme.share(&secret, &mut words).unwrap();
    let pow = |mut b: u64, mut e: u64| {
        let mut r = 1;
        while e > 0 {
            if e & 1 == 1 {
                r = r * b % Q;
            }
            b = b * b % Q;
            e >>= 1;
        }
        r
    };
    let limbs = shares[0].limbs.len();
    let mut hiding = true;
    let mut triples = 0;
    for a in 0..6 {
        for b in a + 1..6 {
            for c in b + 1..6 {
                triples += 1;
                for limb in [0, limbs - 1] {
                    let pts: Vec<(u64, u64)> = [a, b, c]
                        .iter()
                        .map(|&k| (shares[k].holder as u64, shares[k].limbs[limb].value()))
                        .collect();
                    // every polynomial s + a1 x + a2 x^2 + a3 x^3 through the first
                    // point fixes s; count those also through the other two
                    let mut hits = vec![0u32; Q as usize];
                    let xs: Vec<[u64; 3]> = pts.iter().map(|&(x, _)| [x, x * x % Q, pow(x, 3)]).collect();
                    for a1 in 0..Q {
                        for a2 in 0..Q {
                            for a3 in 0..Q {
                                let tail = |i: usize| (a1 * xs[i][0] + a2 * xs[i][1] + a3 * xs[i][2]) % Q;
                                let s = (pts[0].1 + Q - tail(0)) % Q;
                                if (s + tail(1)) % Q == pts[1].1 && (s + tail(2)) % Q == pts[2].1 {
                                    hits[s as usize] += 1;
                                }
                            }
                        }
                    }
                    hiding &= hits.iter().all(|&h| h == 1);
                }
            }
        }
    }
    v.check(
        hiding,
        format!("{triples} share triples x 2 limbs: every candidate in F_257 consistent exactly once"),
    );

    let mut subsets = 0;
    let mut reconstruct = true;
    for mask in 0u32..64 {
        let chosen: Vec<Share> = (0..6)
            .filter(|k| mask >> k & 1 == 1)
            .map(|k| shares[k].clone())
            .collect();
        match chosen.len() {
            0..=3 => {
                if chosen.len() == 3 {
                    reconstruct &= matches!(scheme.reconstruct(&chosen), Err(Error::InsufficientShares { .. }));
                }
            }
            _ => {
                subsets += 1;
                reconstruct &= scheme.reconstruct(&chosen) == Ok(secret);
            }
        }
    }
    v.check(
        reconstruct,
        format!("all {subsets} subsets of 4 or more reconstruct; triples are refused"),
    );
}

type Criterion = (&'static str, fn(&mut Verdict));

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 exact aggregation", exactness),
        ("2 dropout threshold", threshold),
        ("3 compression", compression),
        ("4 privacy contributors", privacy),
        ("5 unbiasedness", unbiasedness),
        ("6 variance bound", variance),
        ("7 convergence", convergence),
        ("8 communication", communication),
        ("9 shamir hiding", shamir_hiding),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let mut verdict = Verdict::new();
        if let Err(panic) = catch_unwind(AssertUnwindSafe(|| run(&mut verdict))) {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict.check(false, format!("panicked: {msg}"));
        }
        failed += !verdict.passed as usize;
        println!(
            "{} criterion {name} ({:.1}s): {}",
            if verdict.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            verdict.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
