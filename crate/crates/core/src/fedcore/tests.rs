use proptest::prelude::*;

use super::*;
use crate::bevdata::ClientDataset;
use crate::diagnostics::RoughnessConfig;
use crate::fracopt::FracConfig;
use crate::metrics::{MetricConfig, RoundRecord};
use crate::model::{MlpModel, MlpSpec, Sample};
use crate::numerics::{ParamVector, Purpose, RngStream};

fn pv(v: &[f64]) -> ParamVector {
    ParamVector::new(v.to_vec())
}

/// Small regression task: `y = sin(a·x₀) + b·x₁` with a per-client shift.
fn synthetic(k: usize, n: usize, seed: u64) -> Vec<ClientDataset> {
    (0..k)
        .map(|c| {
            let mut rng = RngStream::for_domain(seed, 0, c as u64, Purpose::Custom(42));
            let shift = c as f64 * 0.1;
            let mut draw = |m: usize| -> Vec<Sample> {
                (0..m)
                    .map(|_| {
                        let x0 = rng.uniform_range(-1.0, 1.0);
                        let x1 = rng.uniform_range(-1.0, 1.0);
                        Sample::new(vec![x0, x1], (2.0 * x0).sin() + 0.5 * x1 + shift)
                    })
                    .collect()
            };
            let train = draw(n + c);
            let test = draw(8);
            ClientDataset::from_samples(c, train, Vec::new(), test)
        })
        .collect()
}

fn small_cfg(algorithm: Algorithm) -> FedConfig {
    FedConfig {
        clients: 6,
        participation: 0.5,
        rounds: 6,
        local_work: LocalWork::Steps(4),
        batch_size: 8,
        eta0: 0.1,
        lambda: 0.1,
        roughness: RoughnessConfig { directions: 3, segments: 10, probe_batch: 16, ..RoughnessConfig::default() },
        probe_every: 2,
        algorithm,
        hidden_dims: vec![6],
        seed: 11,
        ..FedConfig::default()
    }
}

fn run(cfg: &FedConfig, data: &[ClientDataset]) -> RunOutput {
    run_experiment(cfg, &MetricConfig::default(), data, &RunOptions { audit: true, ..RunOptions::default() }).unwrap()
}

fn max_abs_diff(a: &ParamVector, b: &ParamVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Every broadcast and client vector agrees within `tol`.
fn assert_same_trajectory(a: &RunOutput, b: &RunOutput, tol: f64) {
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(&b.records) {
        assert_eq!(ra.participant_ids(), rb.participant_ids());
        let (aa, ab) = (ra.audit.as_ref().unwrap(), rb.audit.as_ref().unwrap());
        assert!(max_abs_diff(&aa.broadcast, &ab.broadcast) <= tol, "round {}", ra.round);
        for ((_, wa), (_, wb)) in aa.client_params.iter().zip(&ab.client_params) {
            assert!(max_abs_diff(wa, wb) <= tol, "round {}", ra.round);
        }
    }
    assert!(max_abs_diff(&a.final_params, &b.final_params) <= tol);
}

fn strip_timing(records: &[RoundRecord]) -> Vec<RoundRecord> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.train_seconds = 0.0;
            r.diag_seconds = 0.0;
            for p in &mut r.participants {
                p.train_seconds = 0.0;
                p.diag_seconds = 0.0;
            }
            r
        })
        .collect()
}

#[test]
fn participant_counts() {
    assert_eq!(participant_count(0.3, 10), 3);
    assert_eq!(participant_count(0.05, 10), 1);
    assert_eq!(participant_count(0.3, 7), 3);
    assert_eq!(participant_count(1.0, 4), 4);
    let mut avail = vec![true; 10];
    let mut rng = RngStream::for_domain(1, 0, 0, Purpose::Participation);
    let s = sample_participants(&mut avail, 0.3, &mut rng).unwrap();
    assert_eq!(s.len(), 3);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn sampling_respects_availability_and_forces_a_join() {
    let mut avail = vec![false, true, false, true, true, false, true, true, true, false];
    let mut rng = RngStream::for_domain(2, 0, 0, Purpose::Participation);
    let s = sample_participants(&mut avail, 0.3, &mut rng).unwrap();
    assert_eq!(s.len(), 2);
    assert!(s.iter().all(|&k| avail[k]));

    let mut none = vec![false; 5];
    let s = sample_participants(&mut none, 0.3, &mut rng).unwrap();
    assert_eq!(s.len(), 1);
    assert_eq!(none.iter().filter(|&&a| a).count(), 1);
    assert!(none[s[0]]);
}

#[test]
fn churn_edge_cases() {
    let start = vec![true, false, true, true, false];
    let mut rng = RngStream::for_domain(3, 0, 0, Purpose::Churn);
    let mut a = start.clone();
    advance_churn(&mut a, &ChurnConfig { p_leave: 0.0, p_join: 0.0, ..ChurnConfig::default() }, &mut rng);
    assert_eq!(a, start);
    advance_churn(&mut a, &ChurnConfig { p_leave: 1.0, p_join: 1.0, ..ChurnConfig::default() }, &mut rng);
    assert_eq!(a, start.iter().map(|x| !x).collect::<Vec<_>>());
}

#[test]
fn churn_stationary_fraction() {
    let cfg = ChurnConfig { p_leave: 0.1, p_join: 0.1, ..ChurnConfig::default() };
    let mut a = vec![true; 50];
    let (mut total, rounds) = (0usize, 4000);
    for t in 0..rounds {
        let mut rng = RngStream::for_domain(4, t, 0, Purpose::Churn);
        advance_churn(&mut a, &cfg, &mut rng);
        if t >= 100 {
            total += a.iter().filter(|&&x| x).count();
        }
    }
    let frac = total as f64 / ((rounds - 100) as f64 * 50.0);
    assert!((frac - 0.5).abs() < 0.05, "{frac}");
}

#[test]
fn initial_availability_fraction() {
    let mut rng = RngStream::for_domain(5, 0, 0, Purpose::ChurnInit);
    let cfg = ChurnConfig { initial_available_fraction: 0.4, ..ChurnConfig::default() };
    assert_eq!(initial_availability(10, &cfg, &mut rng).iter().filter(|&&a| a).count(), 4);
    assert!(initial_availability(3, &ChurnConfig::default(), &mut rng).iter().all(|&a| a));
}

#[test]
fn proximal_gradient_examples() {
    let base = pv(&[0.5, -1.0]);
    let w = pv(&[2.0, 3.0]);
    let wt = pv(&[1.0, 1.0]);
    assert_eq!(proximal_gradient(&base, &w, &wt, 0.0, 0.7).unwrap(), base);
    assert_eq!(proximal_gradient(&base, &wt, &wt, 0.3, 0.7).unwrap(), base);
    let g = proximal_gradient(&pv(&[0.5]), &pv(&[2.0]), &pv(&[1.0]), 0.1, 1.0).unwrap();
    assert!((g[0] - 0.6).abs() < 1e-15);
    assert!(proximal_gradient(&base, &pv(&[1.0]), &wt, 0.1, 1.0).is_err());
}

#[test]
fn roughness_response_examples() {
    assert_eq!(roughness_response(0.0, 0.5), 0.0);
    assert_eq!(roughness_response(0.5, 0.5), 0.5);
    assert!(roughness_response(0.5e6, 0.5) > 0.999999);
    assert!(roughness_response(1e300, 0.5) < 1.0 + 1e-15);
}

#[test]
fn aggregate_examples() {
    let a = pv(&[1.0, 1.0]);
    let b = pv(&[3.0, 3.0]);
    assert_eq!(aggregate(&[(0, 5, &a)]).unwrap(), a);
    let agg = aggregate(&[(1, 3, &b), (0, 1, &a)]).unwrap();
    assert_eq!(agg.as_slice(), &[2.5, 2.5]);
    let c = pv(&[2.0, -4.0]);
    let mean = aggregate(&[(0, 2, &a), (1, 2, &b), (2, 2, &c)]).unwrap();
    assert!((mean[0] - 2.0).abs() < 1e-15 && (mean[1] - 0.0).abs() < 1e-15);
    assert!(aggregate(&[]).is_err());
    assert!(aggregate(&[(0, 1, &a), (1, 1, &pv(&[1.0]))]).is_err());
}

#[test]
fn fednova_equal_steps_is_plain_average_and_unequal_matches_oracle() {
    let wt = pv(&[0.0, 1.0]);
    let a = pv(&[1.0, 2.0]);
    let b = pv(&[3.0, -1.0]);
    let plain = aggregate(&[(0, 1, &a), (1, 3, &b)]).unwrap();
    assert_eq!(fednova_aggregate(&wt, &[(0, 1, &a, 4), (1, 3, &b, 4)]).unwrap(), plain);
    // p = (0.25, 0.75), τ = (2, 6): τ_eff = 5, dir = 0.25·Δa/2 + 0.75·Δb/6
    let out = fednova_aggregate(&wt, &[(0, 1, &a, 2), (1, 3, &b, 6)]).unwrap();
    let want = [5.0 * (0.25 * 1.0 / 2.0 + 0.75 * 3.0 / 6.0), 1.0 + 5.0 * (0.25 * 1.0 / 2.0 + 0.75 * -2.0 / 6.0)];
    assert!((out[0] - want[0]).abs() < 1e-14 && (out[1] - want[1]).abs() < 1e-14);
}

#[test]
fn fedadam_first_step_oracle() {
    let cfg = FedAdamConfig::default();
    let wt = pv(&[1.0, -2.0]);
    let avg = pv(&[1.5, -2.0]);
    let mut mom = None;
    let out = fedadam_update(&wt, &avg, &mut mom, &cfg).unwrap();
    let (m, v) = (0.1 * 0.5, 0.01 * 0.25);
    assert!((out[0] - (1.0 + 0.01 * m / (f64::sqrt(v) + 1e-3))).abs() < 1e-15);
    assert_eq!(out[1], -2.0);
    let (m_, v_) = mom.unwrap();
    assert!((m_[0] - m).abs() < 1e-15 && (v_[0] - v).abs() < 1e-15);
}

#[test]
fn scaffold_server_update_averages_deltas() {
    let mut c = None;
    scaffold_server_update(&mut c, &[&pv(&[1.0, 0.0]), &pv(&[3.0, 2.0])]).unwrap();
    assert_eq!(c.clone().unwrap().as_slice(), &[2.0, 1.0]);
    scaffold_server_update(&mut c, &[]).unwrap();
    assert_eq!(c.unwrap().as_slice(), &[2.0, 1.0]);
}

fn linear_model() -> MlpModel {
    MlpModel::new(MlpSpec { input_dim: 1, hidden_dims: vec![], bias: true }).unwrap()
}

fn linear_dataset() -> ClientDataset {
    let train = vec![Sample::new(vec![1.0], 2.0), Sample::new(vec![2.0], 3.5), Sample::new(vec![-1.0], -0.5)];
    ClientDataset::from_samples(0, train, Vec::new(), Vec::new())
}

/// Full-batch gradient of the mean squared error of `y = w·x + b`.
fn linear_grad(ds: &ClientDataset, w: [f64; 2]) -> [f64; 2] {
    let n = ds.train.len() as f64;
    let mut g = [0.0; 2];
    for s in &ds.train {
        let e = w[0] * s.x[0] + w[1] - s.y;
        g[0] += 2.0 * e * s.x[0] / n;
        g[1] += 2.0 * e / n;
    }
    g
}

fn linear_cfg(algorithm: Algorithm, steps: usize) -> FedConfig {
    FedConfig {
        clients: 1,
        participation: 1.0,
        local_work: LocalWork::Steps(steps),
        batch_size: 3,
        eta0: 0.05,
        lr_schedule: LrSchedule::Constant,
        lambda: 0.4,
        roughness: RoughnessConfig { directions: 4, segments: 10, probe_batch: 3, radius: 0.5, ..RoughnessConfig::default() },
        frac: FracConfig { alpha: 0.8, ..FracConfig::default() },
        algorithm,
        hidden_dims: vec![],
        seed: 3,
        ..FedConfig::default()
    }
}

#[test]
fn single_local_step_is_plain_sgd_for_any_alpha() {
    let model = linear_model();
    let ds = linear_dataset();
    let wt = pv(&[0.3, -0.2]);
    for alpha in [0.3, 0.8, 1.0] {
        let mut cfg = linear_cfg(Algorithm::FoRiFedAvg, 1);
        cfg.frac.alpha = alpha;
        let mut st = ClientState::new(&ds, &cfg);
        let ctx = RoundContext { round: 0, global: &wt, server_control: None };
        let up = client_round(&model, &mut st, ctx, &cfg).unwrap().unwrap();
        let g = linear_grad(&ds, [0.3, -0.2]);
        assert!((up.params[0] - (0.3 - 0.05 * g[0])).abs() < 1e-15);
        assert!((up.params[1] - (-0.2 - 0.05 * g[1])).abs() < 1e-15);
    }
}

#[test]
fn three_step_fo_ri_trace_matches_hand_oracle() {
    let model = linear_model();
    let ds = linear_dataset();
    let cfg = linear_cfg(Algorithm::FoRiFedAvg, 3);
    let w0 = [0.3, -0.2];
    let wt = pv(&w0);
    let mut st = ClientState::new(&ds, &cfg);
    let up = client_round(&model, &mut st, RoundContext { round: 0, global: &wt, server_control: None }, &cfg)
        .unwrap()
        .unwrap();
    let i_k = st.cached_roughness.unwrap();
    let lr = cfg.lambda * i_k / (i_k + cfg.tau_i);
    let gamma_1_2 = 0.918_168_742_399_760_6;

    let eta = 0.05;
    let prox = |w: [f64; 2]| {
        let g = linear_grad(&ds, w);
        [g[0] + lr * (w[0] - w0[0]), g[1] + lr * (w[1] - w0[1])]
    };
    let precond = |cur: f64, prev: f64| ((cur - prev).abs() + 1e-6).powf(0.2) / gamma_1_2;
    let clip = |p: f64| p.clamp(0.2, 5.0);

    let g0 = prox(w0);
    let w1 = [w0[0] - eta * g0[0], w0[1] - eta * g0[1]];
    let g1 = prox(w1);
    let p1 = [clip(precond(w1[0], w0[0])), clip(precond(w1[1], w0[1]))];
    let w2 = [w1[0] - eta * g1[0] * p1[0], w1[1] - eta * g1[1] * p1[1]];
    let g2 = prox(w2);
    let p2 = [clip(precond(w2[0], w1[0])), clip(precond(w2[1], w1[1]))];
    let w3 = [w2[0] - eta * g2[0] * p2[0], w2[1] - eta * g2[1] * p2[1]];

    assert!(lr > 0.0);
    assert!((up.params[0] - w3[0]).abs() < 1e-12, "{} vs {}", up.params[0], w3[0]);
    assert!((up.params[1] - w3[1]).abs() < 1e-12, "{} vs {}", up.params[1], w3[1]);
    let drift = ((w3[0] - w0[0]).powi(2) + (w3[1] - w0[1]).powi(2)).sqrt();
    assert!((up.stat.drift - drift).abs() < 1e-12);
    assert_eq!(up.stat.local_steps, 3);
    assert!(up.stat.probed);
}

#[test]
fn empty_client_is_skipped() {
    let model = linear_model();
    let ds = ClientDataset::from_samples(0, Vec::new(), Vec::new(), vec![Sample::new(vec![1.0], 1.0)]);
    let cfg = linear_cfg(Algorithm::FedAvg, 2);
    let mut st = ClientState::new(&ds, &cfg);
    let wt = pv(&[0.0, 0.0]);
    assert!(client_round(&model, &mut st, RoundContext { round: 0, global: &wt, server_control: None }, &cfg)
        .unwrap()
        .is_none());
}

#[test]
fn roughness_cache_is_reused_between_probe_rounds() {
    let data = synthetic(4, 20, 1);
    let cfg = FedConfig { clients: 4, participation: 1.0, rounds: 5, probe_every: 3, ..small_cfg(Algorithm::FoRiFedAvg) };
    let out = run(&cfg, &data);
    for r in &out.records {
        for p in &r.participants {
            assert!(p.roughness.is_some());
            assert_eq!(p.probed, r.round % 3 == 0, "round {}", r.round);
        }
    }
    let a = out.records[1].stat(0).unwrap().roughness;
    let b = out.records[2].stat(0).unwrap().roughness;
    assert_eq!(a, b);
}

#[test]
fn zero_rounds_returns_initial_params() {
    let data = synthetic(6, 10, 1);
    let cfg = FedConfig { rounds: 0, ..small_cfg(Algorithm::FedAvg) };
    let out = run(&cfg, &data);
    assert!(out.records.is_empty());
    let model = model_for(&cfg, &data).unwrap();
    let init = model.init_params(&mut RngStream::for_domain(cfg.seed, 0, crate::numerics::SERVER, Purpose::ModelInit));
    assert_eq!(out.final_params, init);
}

#[test]
fn reduction_lattice_is_exact() {
    let data = synthetic(6, 24, 2);
    let base = FedConfig { frac: FracConfig { alpha: 1.0, ..FracConfig::default() }, lambda: 0.0, ..small_cfg(Algorithm::FedAvg) };
    let fedavg = run(&base, &data);
    for alg in [Algorithm::FoRiFedAvg, Algorithm::RiFedAvg, Algorithm::FoFedAvg] {
        let other = run(&FedConfig { algorithm: alg, ..base.clone() }, &data);
        assert_same_trajectory(&fedavg, &other, 1e-12);
    }

    // α = 1 collapses the fractional method onto RI-FedAvg.
    let ri = FedConfig { lambda: 0.3, ..base.clone() };
    let a = run(&FedConfig { algorithm: Algorithm::FoRiFedAvg, ..ri.clone() }, &data);
    let b = run(&FedConfig { algorithm: Algorithm::RiFedAvg, ..ri }, &data);
    assert_same_trajectory(&a, &b, 1e-12);

    // λ = 0 collapses it onto FO-FedAvg.
    let fo = FedConfig { frac: FracConfig::default(), ..base.clone() };
    let a = run(&FedConfig { algorithm: Algorithm::FoRiFedAvg, ..fo.clone() }, &data);
    let b = run(&FedConfig { algorithm: Algorithm::FoFedAvg, ..fo }, &data);
    assert_same_trajectory(&a, &b, 1e-12);
}

#[test]
fn baseline_reductions() {
    let data = synthetic(6, 24, 3);
    let base = small_cfg(Algorithm::FedAvg);
    let fedavg = run(&base, &data);
    let prox = run(&FedConfig { algorithm: Algorithm::FedProx, fedprox_mu: 0.0, ..base.clone() }, &data);
    assert_same_trajectory(&fedavg, &prox, 0.0);
    let nova = run(&FedConfig { algorithm: Algorithm::FedNova, ..base.clone() }, &data);
    assert_same_trajectory(&fedavg, &nova, 0.0);
    let prox = run(&FedConfig { algorithm: Algorithm::FedProx, fedprox_mu: 0.5, ..base.clone() }, &data);
    assert!(max_abs_diff(&fedavg.final_params, &prox.final_params) > 0.0);
}

#[test]
fn scaffold_matches_fedavg_on_identical_full_batch_data() {
    let one = synthetic(1, 16, 4).remove(0);
    let data: Vec<ClientDataset> = (0..2).map(|c| ClientDataset { client_id: c, ..one.clone() }).collect();
    let base = FedConfig {
        clients: 2,
        participation: 1.0,
        rounds: 12,
        batch_size: 64,
        ..small_cfg(Algorithm::FedAvg)
    };
    let fedavg = run(&base, &data);
    let scaffold = run(&FedConfig { algorithm: Algorithm::Scaffold, ..base }, &data);
    assert_same_trajectory(&fedavg, &scaffold, 1e-6);
}

#[test]
fn runs_are_deterministic_and_thread_count_independent() {
    let data = synthetic(6, 24, 5);
    let cfg = FedConfig {
        churn: ChurnConfig { p_leave: 0.2, p_join: 0.3, initial_available_fraction: 0.8 },
        spectral: crate::diagnostics::SpectralConfig { beta_kappa: 0.5, ..Default::default() },
        ..small_cfg(Algorithm::FoRiFedAvg)
    };
    let a = run(&cfg, &data);
    let b = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run(&cfg, &data));
    assert_eq!(strip_timing(&a.records), strip_timing(&b.records));
    assert_eq!(a.final_params, b.final_params);
    for alg in Algorithm::ALL {
        let c = FedConfig { algorithm: alg, ..cfg.clone() };
        let x = run(&c, &data);
        let y = run(&c, &data);
        assert_eq!(strip_timing(&x.records), strip_timing(&y.records), "{alg}");
        assert!(x.final_params.is_finite());
    }
}

#[test]
fn participation_cardinality_and_drift_consistency() {
    let data = synthetic(6, 24, 6);
    let cfg = FedConfig {
        rounds: 10,
        churn: ChurnConfig { p_leave: 0.3, p_join: 0.2, initial_available_fraction: 1.0 },
        ..small_cfg(Algorithm::FoRiFedAvg)
    };
    let out = run(&cfg, &data);
    for r in &out.records {
        assert_eq!(r.participants.len(), participant_count(cfg.participation, r.n_available));
        let audit = r.audit.as_ref().unwrap();
        for ((k, w), stat) in audit.client_params.iter().zip(&r.participants) {
            assert_eq!(*k, stat.client);
            let d = w.distance(&audit.broadcast).unwrap();
            assert!((d - stat.drift).abs() <= 1e-12 * d.max(1.0));
        }
    }
    assert!(out.records.last().unwrap().metrics.is_some());
}

#[test]
fn aggregated_model_stays_inside_client_hull() {
    let data = synthetic(6, 24, 7);
    let out = run(&small_cfg(Algorithm::FoRiFedAvg), &data);
    for w in out.records.windows(2) {
        let audit = w[0].audit.as_ref().unwrap();
        let next = &w[1].audit.as_ref().unwrap().broadcast;
        for i in 0..next.len() {
            let lo = audit.client_params.iter().map(|(_, p)| p[i]).fold(f64::INFINITY, f64::min);
            let hi = audit.client_params.iter().map(|(_, p)| p[i]).fold(f64::NEG_INFINITY, f64::max);
            assert!(next[i] >= lo - 1e-12 && next[i] <= hi + 1e-12);
        }
    }
}

#[test]
fn dataset_count_must_match_clients() {
    let data = synthetic(3, 10, 1);
    let err = run_experiment(&small_cfg(Algorithm::FedAvg), &MetricConfig::default(), &data, &RunOptions::default());
    assert!(matches!(err, Err(crate::Error::Config(_))));
}

proptest! {
    #[test]
    fn aggregation_is_convex(
        rows in prop::collection::vec((1usize..50, prop::collection::vec(-10.0f64..10.0, 4)), 1..8)
    ) {
        let vecs: Vec<ParamVector> = rows.iter().map(|(_, v)| ParamVector::new(v.clone())).collect();
        let ups: Vec<(usize, usize, &ParamVector)> = rows.iter().zip(&vecs).enumerate().map(|(k, ((n, _), w))| (k, *n, w)).collect();
        let agg = aggregate(&ups).unwrap();
        for i in 0..4 {
            let lo = vecs.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
            let hi = vecs.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg[i] >= lo - 1e-12 && agg[i] <= hi + 1e-12);
        }
    }

    #[test]
    fn participant_count_bounds(c in 0.001f64..=1.0, n in 1usize..500) {
        let m = participant_count(c, n);
        prop_assert!(m >= 1 && m <= n);
        prop_assert!(m as f64 >= c * n as f64 - 1e-6);
        prop_assert!((m as f64) < c * n as f64 + 1.0 || m == 1);
    }

    #[test]
    fn roughness_response_in_unit_interval(i in 0.0f64..1e6, tau in 1e-6f64..1e3) {
        let r = roughness_response(i, tau);
        prop_assert!((0.0..1.0).contains(&r));
    }
}
