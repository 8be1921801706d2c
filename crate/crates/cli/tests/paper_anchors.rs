//! Benchmark-anchored spot checks that only need the prior-side machinery.
//!
//! The repair-dominated optimum of the scour case transfers across capacity
//! models and is checked against its published value; risk-dominated
//! currency values depend on the (unpublished) capacity curve of the original
//! study and are checked structurally (action and sign) instead.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;

use shm_voi_core::decision::{expected_lcc_prior, optimize_w, vppi, CostModel, WGrid};
use shm_voi_core::fe::DamageKind;
use shm_voi_core::pipeline::StudySetup;
use shm_voi_core::surrogate::SurrogateBundle;

fn bundle_for(case: &str) -> Arc<SurrogateBundle> {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join(format!("out-{case}"));
    let cfg_path = dir.join(format!("{case}.toml"));
    std::fs::write(
        &cfg_path,
        format!("case = \"{case}\"\noutput_dir = \"{}\"\n", out.display()),
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_shm-voi"))
        .args(["--config", cfg_path.to_str().unwrap(), "build-surrogate"])
        .status()
        .unwrap();
    assert!(status.success());
    let file = std::fs::File::open(out.join("cache/surrogate.bin")).unwrap();
    Arc::new(SurrogateBundle::read_binary(std::io::BufReader::new(file)).unwrap())
}

#[test]
fn scour_prior_optimum_at_published_sample_count() {
    let setup = StudySetup::default_for(DamageKind::Scour, bundle_for("scour")).unwrap();
    let ensemble = setup.sample_ensemble(1000, 314).unwrap();
    let hazard = ensemble.mean_hazard();
    let grid = WGrid::logarithmic(1e-6, 1e-1, 200).unwrap();

    // Ratio 1e-3: the published optimum (threshold 2e-5, repair year 31,
    // total 5924) is dominated by the discounted repair cost. The cost of
    // that published policy transfers across capacity models; whether it
    // narrowly beats the no-repair branch is a coin flip of the Monte Carlo
    // tail, so the found optimum is only required not to exceed it.
    let cost = CostModel {
        c_f: 1e7,
        c_r: 1e4,
        discount_rate: 0.02,
        horizon: 50,
    };
    let published_policy = expected_lcc_prior(&ensemble, &hazard, &cost, 2e-5);
    let t = published_policy
        .t_repair
        .expect("threshold 2e-5 must trigger a repair");
    assert!(
        (t as i64 - 31).abs() <= 8,
        "threshold 2e-5 repairs at year {t}, published value 31"
    );
    assert!(
        (published_policy.expected_total - 5924.0).abs() / 5924.0 < 0.20,
        "published-policy cost {} vs published 5924",
        published_policy.expected_total
    );
    let (_, opt) = optimize_w(&grid, |w| Ok(expected_lcc_prior(&ensemble, &hazard, &cost, w)))
        .unwrap();
    assert!(opt.expected_total <= published_policy.expected_total + 1e-9);

    // Ratios 1e-1 and 1e-2: repairs are too expensive, no-repair wins.
    for c_r in [1e6, 1e5] {
        let cost = CostModel {
            c_f: 1e7,
            c_r,
            discount_rate: 0.02,
            horizon: 50,
        };
        let (w_star, opt) =
            optimize_w(&grid, |w| Ok(expected_lcc_prior(&ensemble, &hazard, &cost, w))).unwrap();
        assert!(w_star.is_infinite(), "ratio {:.0e}: expected no repair", c_r / 1e7);
        assert_eq!(opt.t_repair, None);
        assert_eq!(opt.expected_repair, 0.0);
    }
}

#[test]
fn vppi_is_nonnegative_for_both_cases() {
    for (case, kind) in [("scour", DamageKind::Scour), ("corrosion", DamageKind::Corrosion)] {
        let setup = StudySetup::default_for(kind, bundle_for(case)).unwrap();
        let ensemble = setup.sample_ensemble(500, 314).unwrap();
        let hazard = ensemble.mean_hazard();
        let grid = WGrid::logarithmic(1e-6, 1e-1, 120).unwrap();
        for ratio in [1e-1, 1e-2, 1e-3] {
            let cost = CostModel {
                c_f: 1e7,
                c_r: ratio * 1e7,
                discount_rate: 0.02,
                horizon: 50,
            };
            let (_, opt) =
                optimize_w(&grid, |w| Ok(expected_lcc_prior(&ensemble, &hazard, &cost, w)))
                    .unwrap();
            let est = vppi(&ensemble, &cost, &grid, &opt).unwrap();
            assert!(
                est.value >= -1e-9,
                "{case} ratio {ratio:.0e}: VPPI {}",
                est.value
            );
        }
    }
}
