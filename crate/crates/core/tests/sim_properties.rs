use coprimary::inference::FinalRule;
use coprimary::rng::seeded;
use coprimary::sim::*;
use coprimary::{StudyConfig, Threshold};

fn scenario(n: usize, n_sim: usize) -> LfcScenario {
    LfcScenario {
        s: 4,
        theta0: Threshold::symmetric(0.8).unwrap(),
        epsilon: 0.0,
        prevalence: 0.3,
        n_total: n,
        corr_strength: 0.5,
        corr_structure: CorrStructure::Equicorrelation,
        acc_cap: None,
        n_sim,
    }
}

#[test]
fn fwer_se_bound_and_worker_independence() {
    let sc = scenario(300, 400);
    let cfg = StudyConfig::new(sc.theta0);
    let a = simulate_fwer(&sc, &cfg, &mut seeded(1)).unwrap();
    assert!(a.mc_se <= 0.5 / (a.n_sim as f64).sqrt());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| simulate_fwer(&sc, &cfg, &mut seeded(1))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn acc_cap_on_random_configurations() {
    let thr = Threshold::symmetric(0.9).unwrap();
    for s in [2usize, 5, 10, 20] {
        for mask in 0..64u32 {
            let b: Vec<bool> = (0..s).map(|m| mask >> (m % 6) & 1 == 1).collect();
            let (mut se, mut sp) = lfc_parameters(s, &thr, 0.002, &b).unwrap();
            apply_acc_cap(&mut se, &mut sp, 0.2, 0.95).unwrap();
            for m in 0..s {
                assert!(0.2 * se[m] + 0.8 * sp[m] <= 0.95 + 1e-15);
                assert!(se[m] <= 0.9 + 1e-15 || sp[m] <= 0.9 + 1e-15);
            }
        }
    }
}

#[test]
fn identical_models_give_identical_performance() {
    let m = 4;
    let c = CorrStructure::Equicorrelation.matrix(0.6, m);
    let truth = StudyTruth::new(vec![0.85; m], vec![0.8; m], &c, &c).unwrap();
    let cfg = StudyConfig::new(Threshold::symmetric(0.7).unwrap()).with_n_eval(200);
    let design = StudyDesign {
        n_val: 100,
        prevalence: 0.5,
        final_rule: FinalRule::MaxT,
    };
    let mut rng = seeded(4);
    for rule in [SelectionRule::Default, SelectionRule::WithinKSe(1.0), SelectionRule::Oracle] {
        for _ in 0..5 {
            let r = simulate_study(&truth, &rule, &design, &cfg, &mut rng).unwrap();
            assert_eq!(r.vartheta_star, 0.8);
        }
    }
}

#[test]
fn summary_orders_overestimation_events() {
    let m = 3;
    let c = CorrStructure::Equicorrelation.matrix(0.3, m);
    let truth = StudyTruth::new(vec![0.82, 0.85, 0.8], vec![0.84, 0.8, 0.86], &c, &c).unwrap();
    let cfg = StudyConfig::new(Threshold::symmetric(0.75).unwrap()).with_n_eval(300);
    let design = StudyDesign {
        n_val: 150,
        prevalence: 0.4,
        final_rule: FinalRule::MaxT,
    };
    let mut rng = seeded(8);
    let recs: Vec<StudyRecord> = (0..60)
        .map(|_| simulate_study(&truth, &SelectionRule::WithinKSe(1.0), &design, &cfg, &mut rng).unwrap())
        .collect();
    let s = aggregate(&recs, 0.8).unwrap();
    assert!(s.p_o2.mean <= s.p_o1.mean);
    assert!(s.e_s.mean >= 1.0);
    assert_eq!(s.rows().len(), 12);
}
