//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the lines are always shown.
//! A failing criterion listed in `DOCUMENTED` is reported but does not fail
//! the run; any other failure does.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use sparsepower::eigengrid::eigen_from_kernel;
use sparsepower::harness::{EstimationMode, ExperimentGrid, GridRow};
use sparsepower::linalg::{spd_solve_vec, Matrix};
use sparsepower::pass::{build_nonnull, prepare_model, sample_nonnull, seed_streams, PowerMode};
use sparsepower::probdist::{
    chisq_cdf, chisq_quantile, chisq_sample, f_cdf, f_quantile, noncentral_chisq1_sample, standard_normal,
    MvnSampler, RngStream,
};
use sparsepower::process::{generate_dataset, CovarianceKernel, MeanDiff, SamplingDesign};
use sparsepower::testkit::hotelling_test;
use sparsepower_cli::commands;
use sparsepower_cli::config::{self, PresetKind, SampleSizeConfig, TestConfig};
use sparsepower_cli::csv_input::{read_csv, write_csv};

/// Criteria whose shortfall is explained in the decisions ledger.
const DOCUMENTED: &[(u32, &str)] = &[
    (2, "empirical Case 2 power sits below the reported values; BLUP shrinkage under CAR(1) truncation"),
    (4, "missing-data sweep (n=200) runs about 0.05 above the reported values at p = 0.4"),
];

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    lines: Vec<String>,
}

struct Check {
    pass: bool,
    lines: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { pass: true, lines: Vec::new() }
    }

    fn near(&mut self, label: &str, got: f64, want: f64, tol: f64) {
        let ok = (got - want).abs() <= tol;
        self.pass &= ok;
        self.lines.push(format!("{} {label}: {got:.4} vs {want} ± {tol}", mark(ok)));
    }

    fn within(&mut self, label: &str, got: f64, lo: f64, hi: f64) {
        let ok = got >= lo && got <= hi;
        self.pass &= ok;
        self.lines.push(format!("{} {label}: {got:.4} in [{lo}, {hi}]", mark(ok)));
    }

    fn holds(&mut self, label: &str, ok: bool) {
        self.pass &= ok;
        self.lines.push(format!("{} {label}", mark(ok)));
    }

    fn done(self, id: u32, title: &'static str) -> Outcome {
        Outcome { id, title, pass: self.pass, lines: self.lines }
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok  "
    } else {
        "MISS"
    }
}

fn grid_preset(name: &str) -> ExperimentGrid {
    config::parse(config::preset(name, PresetKind::Validate).unwrap(), name).unwrap()
}

fn samplesize_preset(name: &str) -> SampleSizeConfig {
    config::parse(config::preset(name, PresetKind::Samplesize).unwrap(), name).unwrap()
}

fn find(rows: &[GridRow], eta: f64, n: usize, missing: f64) -> &GridRow {
    rows.iter().find(|r| r.eta == eta && r.n == n && r.missing == missing).expect("cell present")
}

fn criterion1() -> Outcome {
    let mut c = Check::new();
    let grid = grid_preset("null-size");
    assert_eq!((grid.sizes.as_slice(), grid.reps), (&[200usize][..], 1000));
    let fpca = commands::validate(&grid).unwrap();
    let e = fpca[0].empirical.as_ref().unwrap();
    c.within("empirical-fPCA rate (B=1000, n=100/100)", e.rate, 0.03, 0.07);
    c.holds(&format!("no failed replicates ({})", e.failures), e.failures == 0);
    let mut known = grid.clone();
    known.mode = EstimationMode::KnownEigen;
    let rows = commands::validate(&known).unwrap();
    c.within("known-eigen rate (B=1000)", rows[0].empirical.as_ref().unwrap().rate, 0.035, 0.065);
    c.done(1, "null size, Case 2 medium")
}

fn table1(c: &mut Check, preset: &str, cells: &[(f64, usize, f64, f64)]) {
    let mut grid = grid_preset(preset);
    grid.reps = 500;
    for &eta in &[0.5, 1.0] {
        let want: Vec<_> = cells.iter().filter(|x| x.0 == eta).collect();
        if want.is_empty() {
            continue;
        }
        grid.etas = vec![eta];
        grid.sizes = want.iter().map(|x| x.1).collect();
        let rows = commands::validate(&grid).unwrap();
        for &&(eta, n, theo, emp) in &want {
            let r = find(&rows, eta, n, 0.0);
            c.near(&format!("theoretical η={eta} n={n}"), r.theoretical, theo, 0.04);
            c.near(&format!("empirical   η={eta} n={n} (B=500)"), r.empirical.as_ref().unwrap().rate, emp, 0.06);
        }
    }
}

fn criterion2() -> Outcome {
    let mut c = Check::new();
    // (η, total n, theoretical target, empirical target)
    table1(
        &mut c,
        "table1-case2-medium",
        &[(0.5, 100, 0.45, 0.44), (0.5, 200, 0.75, 0.74), (0.5, 400, 0.97, 0.96), (1.0, 100, 0.97, 0.91)],
    );
    c.done(2, "table1-case2-medium: theoretical and empirical power")
}

fn criterion3() -> Outcome {
    let mut c = Check::new();
    table1(&mut c, "table1-case3-medium", &[(1.0, 100, 0.17, 0.20), (1.0, 200, 0.33, 0.34), (1.0, 400, 0.58, 0.58)]);
    c.done(3, "table1-case3-medium: theoretical and empirical power")
}

fn criterion4() -> Outcome {
    let mut c = Check::new();
    let grid = grid_preset("table2-case2-low");
    let rows = commands::validate(&grid).unwrap();
    c.holds(&format!("{} cells in the sweep", rows.len()), rows.len() == 8);
    let mut row = Vec::new();
    for (p, want) in [(0.0, 0.79), (0.1, 0.80), (0.2, 0.82), (0.4, 0.87)] {
        let v = find(&rows, 0.5, 200, p).theoretical;
        c.near(&format!("n=200 missing={p}"), v, want, 0.05);
        row.push(v);
    }
    let spread = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min);
    c.within("row max − min", spread, 0.0, 0.10);
    c.done(4, "table2-case2-low: missing-data sweep, η=0.5")
}

fn criterion5() -> Outcome {
    let mut c = Check::new();
    for (preset, wants) in
        [("table3-case2-medium", vec![(0.8, 60.0, 10.0), (0.9, 82.0, 10.0)]), ("table3-case3-medium", vec![(0.9, 800.0, 80.0)])]
    {
        let cfg = samplesize_preset(preset);
        let rows = commands::samplesize(&cfg).unwrap();
        // direct evaluation with the streams the command uses
        let (prep, power_rng) = seed_streams(RngStream::new(cfg.seed).substream(0).key());
        let mut model = cfg.model.clone();
        model.meandiff = cfg.model.meandiff.scaled(cfg.etas[0]);
        let prepared = prepare_model(&prep, &model).unwrap();
        for (target, total, tol) in wants {
            let r = rows.iter().find(|r| r.target == target).unwrap();
            c.near(&format!("{preset} γ={target} total n"), r.total as f64, total, tol);
            let at = prepared.power(&power_rng, cfg.kappa, r.n2, cfg.alpha, cfg.draws, cfg.mode).unwrap().power;
            let below = prepared.power(&power_rng, cfg.kappa, r.n2 - 1, cfg.alpha, cfg.draws, cfg.mode).unwrap().power;
            c.holds(
                &format!("{preset} γ={target}: power(n*−1) = {below:.4} ≤ γ < power(n*) = {at:.4}"),
                below <= target && target < at && at == r.power,
            );
        }
    }
    c.done(5, "table3 presets: minimum sample sizes")
}

fn random_spd(rng: &mut RngStream, k: usize) -> Matrix {
    let b = Matrix::from_fn(k, k, |_, _| standard_normal(rng) * 0.6);
    let mut a = b.matmul(&b.transpose());
    a.add_scaled(&Matrix::identity(k), 0.3);
    a
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn criterion6() -> Outcome {
    let mut c = Check::new();
    let mut rng = RngStream::new(600);
    for k in 1..=3usize {
        for n2 in [20usize, 100] {
            let lam = random_spd(&mut rng, k);
            let delta: Vec<f64> = (0..k).map(|_| 0.5 * standard_normal(&mut rng)).collect();
            let spec = build_nonnull(&delta, &lam, &lam, 1.0, n2).unwrap();
            let n = 2 * n2;
            let nu_err = (spec.nu - (n as f64 - 2.0)).abs();

            let q: f64 = delta.iter().zip(spd_solve_vec(&lam, &delta).unwrap()).map(|(a, b)| a * b).sum();
            let ncp = (n2 * n2) as f64 / n as f64 * q;
            let m = 100_000;
            let ours = sample_nonnull(&rng.substream(k as u64 * 1000 + n2 as u64), &spec, m).unwrap();
            let mut r2 = rng.substream(5000 + k as u64 * 1000 + n2 as u64);
            let scale = 1.0 / (1.0 - 1.0 / n2 as f64);
            let closed: Vec<f64> = (0..m)
                .map(|_| {
                    let mut num = noncentral_chisq1_sample(&mut r2, ncp).unwrap();
                    if k > 1 {
                        num += chisq_sample(&mut r2, (k - 1) as f64).unwrap();
                    }
                    scale * num / (chisq_sample(&mut r2, (n - k - 1) as f64).unwrap() / (n as f64 - 2.0))
                })
                .collect();
            c.holds(&format!("K={k} n2={n2}: |ν − (n−2)| = {nu_err:.1e}"), nu_err <= 1e-9 * n as f64);
            c.within(&format!("K={k} n2={n2}: KS distance"), ks_two_sample(ours, closed), 0.0, 0.015);
        }
    }
    c.done(6, "equal-variance reduction")
}

fn criterion7() -> Outcome {
    let mut c = Check::new();
    let mut model = sparsepower::pass::ModelSpec::new(
        MeanDiff::cubic(1.0),
        CovarianceKernel::NonStationaryRank2,
        SamplingDesign::uniform_range(8, 12),
        0.001,
    );
    model.pve = 0.9;
    let (prep, power_rng) = seed_streams(700);
    let prepared = prepare_model(&prep, &model).unwrap();
    let n2 = 100;
    let theory = prepared.power(&power_rng, 1.0, n2, 0.05, 100_000, PowerMode::Exact).unwrap().power;
    let g1 = MvnSampler::new(vec![0.0; prepared.k()], &prepared.lambda1).unwrap();
    let g2 = MvnSampler::new(prepared.delta.clone(), &prepared.lambda2).unwrap();
    let root = RngStream::new(701);
    let reps = 10_000u64;
    let rejections = (0..reps)
        .filter(|&r| {
            let mut rng = root.substream(r);
            let a: Vec<Vec<f64>> = (0..n2).map(|_| g1.sample(&mut rng)).collect();
            let b: Vec<Vec<f64>> = (0..n2).map(|_| g2.sample(&mut rng)).collect();
            hotelling_test(&a, &b, 0.05).unwrap().reject
        })
        .count();
    c.near("non-null law power vs 10⁴ direct simulations", theory, rejections as f64 / reps as f64, 0.03);
    c.done(7, "oracle equivalence, Case 3")
}

fn criterion8() -> Outcome {
    let mut c = Check::new();
    let dfs = [0.7, 1.0, 2.0, 3.5, 10.0, 57.3, 500.0];
    let mut worst = 0.0f64;
    for &d1 in &dfs {
        for &d2 in &dfs {
            for i in 1..100 {
                let p = i as f64 / 100.0;
                worst = worst.max((f_cdf(f_quantile(p, d1, d2).unwrap(), d1, d2) - p).abs());
            }
        }
        for i in 1..100 {
            let p = i as f64 / 100.0;
            worst = worst.max((chisq_cdf(chisq_quantile(p, d1).unwrap(), d1) - p).abs());
        }
    }
    c.holds(&format!("quantile round-trip error {worst:.1e} ≤ 1e-9"), worst <= 1e-9);
    let sys = eigen_from_kernel(&CovarianceKernel::NonStationaryRank2, 100, 0.9).unwrap();
    c.holds(&format!("Case 3 K = {}", sys.k()), sys.k() == 2);
    c.near("λ₁ (R=100)", sys.values[0], 1.0, 0.01);
    c.near("λ₂ (R=100)", sys.values[1], 0.5, 0.005);
    let orth = sys.orthonormality_error();
    c.holds(&format!("orthonormality error {orth:.1e} ≤ 1e-8"), orth <= 1e-8);
    c.done(8, "numerics")
}

fn bin(args: &[&str], threads: &str) -> Vec<u8> {
    let o = Command::new(env!("CARGO_BIN_EXE_sparsepower"))
        .args(args)
        .args(["--threads", threads, "-q"])
        .output()
        .expect("binary runs");
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o.stdout
}

fn synthetic_csv(dir: &Path, seed: u64, eta: f64, n: usize) -> std::path::PathBuf {
    let data = generate_dataset(
        &RngStream::new(seed),
        n,
        n,
        &MeanDiff::cubic(eta),
        &CovarianceKernel::Car1 { variance: 1.0, base: 0.5 },
        &SamplingDesign::uniform_fixed(8),
        0.001,
    )
    .unwrap();
    let p = dir.join(format!("s{seed}-e{eta}-n{n}.csv"));
    write_csv(std::fs::File::create(&p).unwrap(), &data, 0.0, 36.0).unwrap();
    p
}

fn criterion9(dir: &Path) -> Outcome {
    let mut c = Check::new();
    let csv = synthetic_csv(dir, 900, 1.0, 60);
    let csv = csv.to_str().unwrap();
    let runs: [(&str, Vec<&str>); 5] = [
        ("power", vec!["power", "--preset", "power-case3-medium", "--draws", "20000"]),
        ("samplesize", vec!["samplesize", "--preset", "table3-case2-medium", "--draws", "20000", "--reps", "100"]),
        ("validate (json)", vec!["validate", "--preset", "table2-case2-low", "--reps", "100"]),
        ("validate (csv)", vec!["validate", "--preset", "table1-case3-medium", "--reps", "100", "--format", "csv"]),
        ("test", vec!["test", csv]),
    ];
    for (label, args) in runs {
        let a = bin(&args, "1");
        let b = bin(&args, "3");
        c.holds(&format!("{label}: {} bytes, identical under 1 and 3 workers", a.len()), !a.is_empty() && a == b);
    }
    c.done(9, "determinism")
}

fn criterion10(dir: &Path) -> Outcome {
    let mut c = Check::new();
    c.lines.push("note Case 1 (compound symmetry) table values: σ² and ρ unstated, not reproduced".into());
    c.lines.push("note real-data p-values and n_min: data unavailable, replaced by the checks below".into());
    let cfg = TestConfig::default();
    let rate = |seed0: u64, files: u64, eta: f64, n: usize| {
        let rejected = (0..files)
            .filter(|i| {
                let path = synthetic_csv(dir, seed0 + i, eta, n);
                let data = read_csv(std::fs::File::open(&path).unwrap()).unwrap();
                std::fs::remove_file(&path).unwrap();
                commands::test(&data, &cfg).unwrap().test.p_value < 0.05
            })
            .count();
        rejected as f64 / files as f64
    };
    c.within("test on 200 null CSVs (n=100/100): fraction p < 0.05", rate(10_000, 200, 0.0, 100), 0.02, 0.09);
    c.within("test on 100 Case 2 η=1 CSVs (n=200/200): rejection fraction", rate(20_000, 100, 1.0, 200), 0.95, 1.0);
    c.done(10, "documented gaps, test-command properties")
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let criteria: Vec<Box<dyn Fn() -> Outcome>> = vec![
        Box::new(criterion1),
        Box::new(criterion2),
        Box::new(criterion3),
        Box::new(criterion4),
        Box::new(criterion5),
        Box::new(criterion6),
        Box::new(criterion7),
        Box::new(criterion8),
        Box::new(|| criterion9(dir.path())),
        Box::new(|| criterion10(dir.path())),
    ];
    let mut unexpected = Vec::new();
    for run in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!("{} criterion {}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.id, o.title);
        for l in &o.lines {
            println!("      {l}");
        }
        if !o.pass {
            match DOCUMENTED.iter().find(|(id, _)| *id == o.id) {
                Some((_, why)) => println!("      documented shortfall: {why}"),
                None => unexpected.push(o.id),
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: no undocumented failures");
    } else {
        println!("acceptance: undocumented failures in criteria {unexpected:?}");
        std::process::exit(1);
    }
}
