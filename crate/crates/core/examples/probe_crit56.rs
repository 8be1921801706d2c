use shm_voi_core::bayes::*;
use shm_voi_core::fe::DamageKind;
use shm_voi_core::pipeline::{DataPath, StudySetup};
use shm_voi_core::surrogate::SurrogateBundle;
use std::sync::Arc;

fn main() {
    let mut args = std::env::args().skip(1);
    let scour_bin = args.next().unwrap();
    let corr_bin = args.next().unwrap();

    // criterion 6: laplace vs mcmc on scour at year 50
    let f = std::fs::File::open(&scour_bin).unwrap();
    let bundle = Arc::new(SurrogateBundle::read_binary(std::io::BufReader::new(f)).unwrap());
    let setup = StudySetup::default_for(DamageKind::Scour, bundle).unwrap();
    let truth = [9.85e-4, 2.28];
    let history = setup.generate_history(&truth, &DataPath::fast_default(), None, 606).unwrap();
    let problem = setup.problem().unwrap();
    let t0 = std::time::Instant::now();
    match laplace_posterior(&problem, &history, 10_000, 607, None) {
        Ok(lap) => {
            let mc = adaptive_mcmc(&problem, &history, 5000, 608, None, None).unwrap();
            let lm = lap.natural_mean();
            let mm = mc.natural_mean();
            let mv = mc.natural_variances();
            println!("crit6 ({:?}): offsets {:.3}σ {:.3}σ", t0.elapsed(),
                (lm[0]-mm[0]).abs()/mv[0].sqrt(), (lm[1]-mm[1]).abs()/mv[1].sqrt());
            let rel = (lap.natural_cov() - mc.natural_cov()).norm() / mc.natural_cov().norm();
            println!("crit6 cov frobenius rel diff: {rel:.3}");
        }
        Err(e) => println!("crit6 LAPLACE FAILED: {e}"),
    }

    // criterion 5: corrosion posterior variance at c=0.02 vs 0.05
    let f = std::fs::File::open(&corr_bin).unwrap();
    let bundle = Arc::new(SurrogateBundle::read_binary(std::io::BufReader::new(f)).unwrap());
    let setup = StudySetup::default_for(DamageKind::Corrosion, bundle).unwrap();
    let truth = [0.65, 0.55, 0.42, 0.48];
    let history = setup.generate_history(&truth, &DataPath::fast_default(), None, 505).unwrap();
    let mut vars = Vec::new();
    for c in [0.02, 0.05] {
        let problem = InferenceProblem::new(
            setup.prior.clone(), setup.bundle.clone(), &setup.layout,
            LikelihoodConfig::with_curvatures(6, c)).unwrap();
        let post = adaptive_mcmc(&problem, &history, 5000, 506, None, None).unwrap();
        println!("crit5 c={c}: acc {:.2} vars {:?}", post.acceptance.unwrap(),
            post.natural_variances().iter().map(|v| format!("{:.2e}", v)).collect::<Vec<_>>());
        vars.push(post.natural_variances());
    }
    let ok = vars[0].iter().zip(&vars[1]).all(|(a, b)| b > a);
    println!("crit5 all variances increased: {ok}");
}
