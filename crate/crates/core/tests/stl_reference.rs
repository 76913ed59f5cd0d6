use mtl_balance::tasks::{make_mlp_regression, make_scaled_quadratic_pair};
use mtl_balance::trainer::{train, Method, TrainConfig};
use mtl_balance::RealVector;

#[test]
fn quadratic_references_are_analytic() {
    let c = |x: f64| RealVector::new(vec![x]).unwrap();
    let ts = make_scaled_quadratic_pair(1, (c(-1.0), c(1.0)), (1.0, 1000.0), 0.1).unwrap();
    let budget = TrainConfig::default();
    let r0 = ts.stl_reference(0, &budget).unwrap();
    let r1 = ts.stl_reference(1, &budget).unwrap();
    assert!((r0.loss - 0.1).abs() < 1e-15);
    assert!((r1.loss - 100.0).abs() < 1e-12);
    assert_eq!(r0.shared, Some(c(-1.0)));
    assert_eq!(r1.shared, Some(c(1.0)));
}

#[test]
fn mlp_reference_is_no_worse_than_joint_training() {
    let ts = make_mlp_regression(2, 4, 4, 128, &[1.0, 10.0], 3).unwrap();
    for seed in 0..3 {
        let budget = TrainConfig {
            steps: 3000,
            batch_size: 32,
            lr: 0.05,
            seed,
            ..Default::default()
        };
        let stl: Vec<f64> = (0..2)
            .map(|t| ts.stl_reference(t, &budget).unwrap().loss)
            .collect();
        assert_eq!(stl[0], ts.stl_reference(0, &budget).unwrap().loss);
        for method in Method::ALL {
            let joint = train(
                &TrainConfig {
                    method,
                    ..budget.clone()
                },
                &ts,
            )
            .unwrap();
            for t in 0..2 {
                assert!(
                    stl[t] <= joint.final_losses[t],
                    "seed {seed} {} task {t}: stl {} joint {}",
                    method.name(),
                    stl[t],
                    joint.final_losses[t]
                );
            }
        }
    }
}
