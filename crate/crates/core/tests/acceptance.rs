//! Acceptance criteria, one line per criterion. Exits non-zero when any fails.

use std::collections::HashSet;
use std::time::Instant;

use evade_core::dynamics::{ParticleRealization, Region, SimulationWindow};
use evade_core::evasion::{check_admissible, detection_time, strategy_percolation_follower, strategy_stationary, SpeedNorm};
use evade_core::field::{
    chi_seed_of, compute_blocked_field, compute_vacancy_field, estimate_vacancy_marginal, find_open_path, Diamond,
};
use evade_core::harness::{estimate_c_hat, run_survival, write_csv, ExperimentConfig, Strategy};
use evade_core::influence::{censored_fraction, fit_exponential_tail_range, sample_chi};
use evade_core::lemmas::{c_hat_spread, lemma_n_count, lemma_psi_intensity};
use evade_core::model::{verify_cone_disjointness, ModelParams};
use evade_core::rng::{mix, trial_seed};
use evade_core::stats::{wilson_interval, Proportion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn cone_disjointness() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for dim in [2, 3] {
        for speed in [0.5, 1.0, 2.0] {
            let p = ModelParams::lattice(1.0, speed, dim).unwrap();
            let r = verify_cone_disjointness(&p, 20, 40, 16).unwrap();
            ok &= r.pass;
            if !r.pass {
                notes.push(format!("d={dim} S={speed}: {:?}", r.counterexample));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    (ok, format!("6 parameter sets, {secs:.1}s{}", notes.iter().map(|n| format!("; {n}")).collect::<String>()))
}

/// Independent detection oracle: any particle occupying a residence site
/// during the residence.
fn occupied_along(r: &ParticleRealization, traj: &evade_core::evasion::Trajectory, horizon: f64) -> bool {
    let radius = r.params().detection_radius();
    traj.residences(horizon).into_iter().any(|(s, a, b)| {
        let region = if r.is_discretized() {
            Region::Ball { center: s.iter().map(|&c| c as f64).collect(), radius }
        } else {
            Region::Site(evade_core::Site::new(s.to_vec()))
        };
        r.occupancy(&region, a, b).unwrap()
    })
}

fn follower_soundness(params: &ModelParams, depth: u64, trials: u64, seed: u64) -> (u64, u64, u64) {
    let window = SimulationWindow::for_depth(params, depth).unwrap();
    let rows: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let r = ParticleRealization::sample(params, &window, trial_seed(seed, t)).unwrap();
            match strategy_percolation_follower(&r, depth).unwrap() {
                None => (false, false),
                Some(traj) => {
                    let horizon = params.level_end(depth);
                    let admissible = check_admissible(&traj, params.speed, SpeedNorm::L1).admissible
                        && check_admissible(&traj, params.speed, SpeedNorm::L2).admissible;
                    let det = detection_time(&traj, &r, horizon, params.detection_radius()).unwrap();
                    let bad = !admissible || det.detected || occupied_along(&r, &traj, horizon);
                    (true, bad)
                }
            }
        })
        .collect();
    let emitted = rows.iter().filter(|r| r.0).count() as u64;
    let bad = rows.iter().filter(|r| r.1).count() as u64;
    (emitted, bad, trials)
}

fn soundness_lattice() -> Outcome {
    let p = ModelParams::lattice(0.1, 1.0, 2).unwrap();
    let (emitted, bad, n) = follower_soundness(&p, 30, 1000, 2);
    (bad == 0, format!("{emitted}/{n} trajectories emitted, {bad} violations"))
}

fn coupling_violations(params: &ModelParams, depth: u64, trials: u64, seed: u64, c_hat: f64) -> (u64, u64) {
    let window = SimulationWindow::for_depth(params, depth).unwrap();
    let rows: Vec<(u64, u64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let r = ParticleRealization::sample(params, &window, trial_seed(seed, t)).unwrap();
            let e = compute_vacancy_field(&r, depth, None).unwrap();
            let y = compute_blocked_field(&r, chi_seed_of(r.seed()), depth, c_hat).unwrap();
            let mut probed = 0;
            let mut bad = 0;
            for (x, z) in e.vacant.sites() {
                probed += 1;
                if y.get(x, z) == Some(true) && e.get(x, z) != Some(true) {
                    bad += 1;
                }
            }
            (probed, bad)
        })
        .collect();
    (rows.iter().map(|r| r.0).sum(), rows.iter().map(|r| r.1).sum())
}

fn coupling_lattice() -> Outcome {
    let p = ModelParams::lattice(0.2, 1.0, 2).unwrap();
    let c_hat = estimate_c_hat(&p, 31).unwrap();
    let (probed, bad) = coupling_violations(&p, 20, 1000, 3, c_hat);
    (bad == 0, format!("c_hat={c_hat:.3}, {probed} site probes, {bad} violations"))
}

fn thinning_monotonicity() -> Outcome {
    let grid = [0.02, 0.1, 0.5, 2.0];
    let depth = 10;
    let top = ModelParams::lattice(2.0, 1.0, 2).unwrap();
    let window = SimulationWindow::for_depth(&top, depth).unwrap();
    let horizon = top.level_end(depth);
    let target = strategy_stationary(2, 1.0);
    let rows: Vec<(u64, u64)> = (0..1000u64)
        .into_par_iter()
        .map(|t| {
            let full = ParticleRealization::sample(&top, &window, trial_seed(4, t)).unwrap();
            let thinned: Vec<ParticleRealization> = grid.iter().map(|&l| full.thinned(l).unwrap()).collect();
            let fields: Vec<Diamond> = thinned.iter().map(|r| compute_vacancy_field(r, depth, None).unwrap().vacant).collect();
            let detected: Vec<bool> =
                thinned.iter().map(|r| detection_time(&target, r, horizon, 1.0).unwrap().detected).collect();
            let mut field_bad = 0;
            let mut det_bad = 0;
            for a in 0..grid.len() - 1 {
                // smaller intensity must be at least as vacant and no more detected
                for (x, y) in fields[a].sites() {
                    if fields[a + 1].get(x, y) == Some(true) && fields[a].get(x, y) != Some(true) {
                        field_bad += 1;
                    }
                }
                if detected[a] && !detected[a + 1] {
                    det_bad += 1;
                }
            }
            (field_bad, det_bad)
        })
        .collect();
    let f: u64 = rows.iter().map(|r| r.0).sum();
    let d: u64 = rows.iter().map(|r| r.1).sum();
    (f == 0 && d == 0, format!("1000 coupled trials, {f} field violations, {d} detection violations"))
}

fn phase_signature() -> Outcome {
    let start = Instant::now();
    let base = ModelParams::lattice(0.01, 1.0, 2).unwrap();
    let mut cfg = ExperimentConfig::new(base.clone(), Strategy::PercolationFollower, 50, 1000, 5);
    cfg.grid = Some(vec![0.01, 1.0]);
    cfg.coupled = true;
    let res = run_survival(&cfg).unwrap();
    let (lo, hi) = (&res.rows[0], &res.rows[1]);
    let disjoint = lo.ci_low > hi.ci_high;

    let grid = [1.0, 0.3, 0.1, 0.03, 0.01];
    let mut p_hats = Vec::new();
    for (i, &l) in grid.iter().enumerate() {
        let p = base.with_lambda(l);
        let m = estimate_vacancy_marginal(&p, 10, 300, mix(6, i as u64), 0.0).unwrap();
        p_hats.push(Proportion::new((m.p_hat_vacant * m.trials as f64).round() as u64, m.trials).unwrap());
    }
    let monotone = p_hats.windows(2).all(|w| w[1].estimate >= w[0].estimate || w[1].overlaps(&w[0]));
    let secs = start.elapsed().as_secs_f64();
    let marg: Vec<String> = grid.iter().zip(&p_hats).map(|(l, p)| format!("{l}:{:.3}", p.estimate)).collect();
    (
        disjoint && monotone && secs <= 600.0,
        format!(
            "survival {:.3} [{:.3},{:.3}] at 0.01 vs {:.3} [{:.3},{:.3}] at 1.0; p_hat {}; {secs:.0}s",
            lo.estimate,
            lo.ci_low,
            lo.ci_high,
            hi.estimate,
            hi.ci_low,
            hi.ci_high,
            marg.join(" ")
        ),
    )
}

fn chi_tail(params: &ModelParams, samples: usize, horizon: f64) -> Outcome {
    let draws = sample_chi(params, samples, horizon, 7).unwrap();
    let cf = censored_fraction(&draws);
    let values: Vec<f64> = draws.iter().filter(|s| !s.censored).map(|s| s.chi).collect();
    match fit_exponential_tail_range(&values, 5.0, 20.0) {
        Ok(fit) => (
            fit.rate > 0.0 && fit.residual <= 0.5 && cf < 0.01,
            format!("slope {:.4}, max residual {:.3}, censored {:.4}, {} points", -fit.rate, fit.residual, cf, fit.points),
        ),
        Err(e) => (false, format!("fit failed: {e}, censored {cf:.4}")),
    }
}

fn chi_tail_lattice() -> Outcome {
    chi_tail(&ModelParams::lattice(0.2, 1.0, 2).unwrap(), 100_000, 200.0)
}

fn psi_oracle() -> Outcome {
    let p = ModelParams::lattice(0.2, 1.0, 2).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [1, 5] {
        let r = lemma_psi_intensity(&p, k, 10_000, 8 + k).unwrap();
        ok &= r.worst_excess <= 0.0;
        notes.push(format!(
            "k={k}: worst excess {:.4} over {} probes, far probe ok {}, corr {:.3}",
            r.worst_excess,
            r.probes.len(),
            r.far_within_noise,
            r.correlation
        ));
    }
    (ok, notes.join("; "))
}

fn n_count_oracle() -> Outcome {
    let p = ModelParams::lattice(0.2, 1.0, 2).unwrap();
    let reports: Vec<_> = [5, 10, 20].iter().map(|&k| lemma_n_count(&p, k, 2000, 9 + k).unwrap()).collect();
    let (mean, dev) = c_hat_spread(&reports);
    let tails = reports.iter().all(|r| r.tail.iter().all(|c| c.pass));
    let each: Vec<String> = reports.iter().map(|r| format!("k={}:{:.3}", r.k, r.c_hat)).collect();
    (tails && dev <= 0.2, format!("c_hat {} (mean {mean:.3}, max deviation {:.1}%), tails ok {tails}", each.join(" "), dev * 100.0))
}

/// Depth-first enumeration of every oriented path, successors in
/// lexicographic order; the first complete path found is the smallest.
fn brute_force(open: &Diamond, depth: u64) -> Option<Vec<(i64, i64)>> {
    fn go(open: &Diamond, depth: u64, path: &mut Vec<(i64, i64)>) -> bool {
        let (x, y) = *path.last().unwrap();
        if (x.abs() + y.abs()) as u64 == depth {
            return true;
        }
        let mut next = vec![(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)];
        next.retain(|&(a, b)| a.abs() + b.abs() == x.abs() + y.abs() + 1);
        next.sort();
        for s in next {
            if open.get(s.0, s.1) == Some(true) {
                path.push(s);
                if go(open, depth, path) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    if open.get(0, 0) != Some(true) {
        return None;
    }
    let mut path = vec![(0, 0)];
    go(open, depth, &mut path).then_some(path)
}

fn dp_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    let mut found = 0;
    for _ in 0..200 {
        let depth = rng.random_range(0..=8u64);
        let p: f64 = rng.random_range(0.3..0.95);
        let open = Diamond::from_fn(depth, |_, _| rng.random::<f64>() < p);
        let a = find_open_path(&open, depth);
        let b = brute_force(&open, depth);
        found += b.is_some() as u32;
        mismatches += (a != b) as u32;
    }
    (mismatches == 0, format!("200 fields, {found} with paths, {mismatches} mismatches"))
}

fn plumbing() -> Outcome {
    let (lo, hi) = wilson_interval(5, 10, 1.96).unwrap();
    let wilson = (lo - 0.2366).abs() <= 1e-3 && (hi - 0.7634).abs() <= 1e-3;
    let hand = {
        // (p + z²/2n ± z sqrt(p(1-p)/n + z²/4n²)) / (1 + z²/n) with p = 0.5, n = 10
        let z2: f64 = 1.96 * 1.96;
        let c = (0.5 + z2 / 20.0) / (1.0 + z2 / 10.0);
        let h = 1.96 * (0.025 + z2 / 400.0).sqrt() / (1.0 + z2 / 10.0);
        ((c - h) - lo).abs() < 1e-12 && ((c + h) - hi).abs() < 1e-12
    };
    let mut cfg = ExperimentConfig::new(ModelParams::lattice(0.1, 1.0, 2).unwrap(), Strategy::PercolationFollower, 12, 200, 11);
    cfg.grid = Some(vec![0.05, 0.2, 0.8]);
    cfg.coupled = true;
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut out = Vec::new();
        write_csv(&pool.install(|| run_survival(&cfg)).unwrap(), &mut out).unwrap();
        out
    };
    let sets: HashSet<Vec<u8>> = [1, 2, 4, 7].into_iter().map(csv).collect();
    (
        wilson && hand && sets.len() == 1,
        format!("wilson(5/10) = ({lo:.4}, {hi:.4}), CSV identical over 1/2/4/7 threads: {}", sets.len() == 1),
    )
}

fn continuum_smoke() -> Outcome {
    let p = ModelParams::continuum(0.1, 1.0, 2).unwrap().with_step_dt(0.01);
    let mut notes = Vec::new();
    let (emitted, bad, n) = follower_soundness(&p, 30, 1000, 12);
    let low = p.with_lambda(0.01);
    let (emitted_low, bad_low, _) = follower_soundness(&low, 30, 200, 13);
    notes.push(format!("soundness {emitted}/{n} + {emitted_low}/200 at 0.01 emitted, {} violations", bad + bad_low));
    let cp = p.with_lambda(0.2);
    let c_hat = estimate_c_hat(&cp, 14).unwrap();
    let (probed, cbad) = coupling_violations(&cp, 20, 1000, 15, c_hat);
    notes.push(format!("coupling c_hat={c_hat:.3}, {probed} probes, {cbad} violations"));
    let (chi_ok, chi_note) = chi_tail(&p, 10_000, 400.0);
    notes.push(format!("chi {chi_note}"));
    let mut cfg = ExperimentConfig::new(p.clone(), Strategy::Stationary, 3, 4, 16);
    cfg.horizon = Some(2.0);
    let flagged = run_survival(&cfg).unwrap().discretized;
    notes.push(format!("discretized flag {flagged}"));
    (bad + bad_low == 0 && cbad == 0 && chi_ok && flagged, notes.join("; "))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 11] = [
        ("cone_disjointness", cone_disjointness),
        ("follower_soundness", soundness_lattice),
        ("blocked_below_vacant", coupling_lattice),
        ("thinning_monotonicity", thinning_monotonicity),
        ("phase_signature", phase_signature),
        ("chi_tail", chi_tail_lattice),
        ("psi_intensity", psi_oracle),
        ("n_count_tail", n_count_oracle),
        ("dp_matches_enumeration", dp_equivalence),
        ("statistical_plumbing", plumbing),
        ("continuum_smoke", continuum_smoke),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = run();
        failed += !ok as u32;
        println!(
            "criterion {:>2} {name:<24} {} ({:.1}s) {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
