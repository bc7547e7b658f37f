use affinity::coupling::{run_coupling_seeds, CouplingPolicy, RaCoupling};
use affinity::model::{Selection, SelectionFamily, ServiceRates};

#[test]
fn ra_reference_is_independent_mm1_queues() {
    // two overlapping selections over four servers; the optimal split loads
    // every server with lambda0 = 0.5
    let fam = SelectionFamily::general(
        4,
        vec![
            Selection { servers: vec![0, 1, 2], rate: 1.5 },
            Selection { servers: vec![3], rate: 0.5 },
        ],
    )
    .unwrap();
    let ra = RaCoupling::from_family(&fam).unwrap();
    assert!((ra.lambda0() - 0.5).abs() < 1e-8);
    let rates = ServiceRates::new(1.0, 0.5).unwrap();
    let seeds: Vec<u64> = (0..20).collect();
    let reports = run_coupling_seeds(&CouplingPolicy::Ra(ra), rates, 400_000, &seeds).unwrap();
    let means: Vec<f64> = reports.iter().map(|r| r.mean_ref_jobs).collect();
    let m = means.iter().sum::<f64>() / means.len() as f64;
    let var = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (means.len() - 1) as f64;
    let se = (var / means.len() as f64).sqrt();
    let rho: f64 = 0.5;
    let target = 4.0 * rho / (1.0 - rho);
    assert!((m - target).abs() < 3.0 * se.max(0.01), "mean {m} vs {target} (se {se})");
    for r in &reports {
        assert_eq!(r.majorization_violations, 0);
        assert!(r.mean_aff_type_i <= r.mean_ref_jobs + 1e-9);
    }
}
