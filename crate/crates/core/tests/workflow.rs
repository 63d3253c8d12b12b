use std::io::BufReader;

use proptest::prelude::*;

use mine_core::datasets::{generate_forward_dataset, Dataset, ForwardSource, HimmelX0Prior};
use mine_core::mcmc::{run_chain, BoxPrior, Chain, ChainConfig, HimmelModel, Observation, OdePosterior};
use mine_core::measures::{w2_1d_uniform, w2_assignment_points};
use mine_core::odes::{HimmelSimulator, Trajectory, SPECIES};
use mine_core::rng::seeded;
use mine_core::MineError;

fn himmel_chain(seed: u64) -> Chain {
    let model = HimmelModel::default();
    let theta = [1.2, 0.6, 0.3];
    let rows: Vec<usize> = (1..model.sim.obs_rows()).collect();
    let obs = Observation::synthesize(&model, &theta, rows, vec![0, 1, 2, 3, 4], vec![0.02; 5], Some(&mut seeded(seed)))
        .unwrap();
    let prior = BoxPrior::positive(vec![10.0; 3]);
    let target = OdePosterior { obs: &obs, model: &model, prior: &prior };
    let cfg = ChainConfig::with_diagonal_scales(1500, 500, vec![1.0, 0.5, 0.25], &[0.06, 0.03, 0.015], seed);
    run_chain(&cfg, &target).unwrap()
}

#[test]
fn chain_to_dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let chain = himmel_chain(3);
    let (csv, side) = (dir.path().join("c.csv"), dir.path().join("c.json"));
    let hash = chain.save(&csv, &side, 3).unwrap();
    let (back, h2) = Chain::load(&csv, &side).unwrap();
    assert_eq!(hash, h2);
    assert_eq!(back.samples, chain.samples);

    let sim = HimmelSimulator::default();
    let x0_prior = HimmelX0Prior::default();
    let sampler = |r: &mut mine_core::rng::MineRng| x0_prior.sample(r);
    let simulate = |x0: &[f64], th: &[f64]| -> mine_core::Result<Trajectory> {
        sim.observe_from(x0.try_into().unwrap(), th.try_into().unwrap())
    };
    let grid = sim.observe_from(&sim.x0, &[1.0, 1.0, 1.0]).unwrap().times();
    let src = ForwardSource {
        name: "himmel",
        x0_names: SPECIES.iter().map(|s| s.to_string()).collect(),
        theta_names: vec!["k1".into(), "k2".into(), "k3".into()],
        grid,
        state_width: 6,
        x0_sampler: &sampler,
        simulator: &simulate,
    };
    let ds = generate_forward_dataset(&back, &hash, &src, 50, 9).unwrap();
    assert_eq!(ds, generate_forward_dataset(&back, &hash, &src, 50, 9).unwrap());
    assert_eq!(ds.split.len(), 50);
    for i in 0..ds.len() {
        let theta = ds.theta(i);
        assert!((0..back.post_burn_in_len()).any(|r| back.posterior_row(r) == theta));
    }

    let (rp, sp) = (dir.path().join("d.mine"), dir.path().join("d.json"));
    let dh = ds.save(&rp, &sp, 3).unwrap();
    let (loaded, dh2) = Dataset::load(&rp, &sp, Some(&hash)).unwrap();
    assert_eq!((loaded, dh2), (ds, dh));
    assert!(matches!(Dataset::load(&rp, &sp, Some("0000")), Err(MineError::Provenance(_))));
}

#[test]
fn trajectory_csv_round_trip() {
    let sim = HimmelSimulator::default();
    let traj = sim.observe_from(&sim.x0, &[1.2, 0.6, 0.3]).unwrap();
    let mut buf = Vec::new();
    traj.write_csv(&SPECIES, &mut buf).unwrap();
    let (names, back) = Trajectory::read_csv(BufReader::new(&buf[..])).unwrap();
    assert_eq!(names, SPECIES.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    assert_eq!(back, traj);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn himmel_conserves_total(a in 0.5f64..3.0, b in 0.1f64..2.0, k in proptest::array::uniform3(0.05f64..3.0)) {
        let sim = HimmelSimulator::default();
        let traj = sim.simulate_from(&[a, b, 0.0, 0.0, 0.0, 0.0], &k).unwrap();
        let total = a + b;
        for r in 0..traj.rows() {
            let s: f64 = traj.row(r).iter().sum();
            prop_assert!(((s - total) / total).abs() <= 1e-10);
            prop_assert!(traj.row(r).iter().all(|v| *v > -1e-12));
        }
    }

    #[test]
    fn one_dimensional_w2_agrees_with_assignment(xs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
        let sorted = w2_1d_uniform(&a, &b).unwrap();
        let exact = w2_assignment_points(&a, &b, 1).unwrap();
        prop_assert!((sorted - exact).abs() <= 1e-9 * (1.0 + exact));
    }
}
