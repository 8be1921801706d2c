use shm_voi_core::bayes::*;
use shm_voi_core::fe::DamageKind;
use shm_voi_core::pipeline::{DataPath, StudySetup};
use shm_voi_core::surrogate::SurrogateBundle;
use std::sync::Arc;

fn main() {
    let f = std::fs::File::open(std::env::args().nth(1).unwrap()).unwrap();
    let bundle = Arc::new(SurrogateBundle::read_binary(std::io::BufReader::new(f)).unwrap());
    let setup = StudySetup::default_for(DamageKind::Corrosion, bundle).unwrap();
    let truth = [0.65, 0.55, 0.42, 0.48];
    let history = setup.generate_history(&truth, &DataPath::fast_default(), None, 777).unwrap();
    let problem = setup.problem().unwrap();
    for years in [10usize, 25, 50] {
        let t0 = std::time::Instant::now();
        let post = adaptive_mcmc(&problem, &history[..years], 5000, 88, None, None).unwrap();
        let mean = post.natural_mean();
        let var = post.natural_variances();
        // crude marginal mode via histogram
        let mode: Vec<f64> = (0..4).map(|d| {
            let mut v: Vec<f64> = post.samples.iter().map(|s| s[d]).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let w = n / 10;
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..n - w {
                let width = v[i + w] - v[i];
                if width < best.0 { best = (width, 0.5 * (v[i + w] + v[i])); }
            }
            best.1
        }).collect();
        println!("year {years} ({:?}, acc {:.2}):", t0.elapsed(), post.acceptance.unwrap());
        for d in 0..4 {
            println!("  θ{}: mean {:.4} std {:.4} mode {:.4} truth {:.4} (mode err {:+.1}%)",
                d, mean[d], var[d].sqrt(), mode[d], truth[d], 100.0 * (mode[d] / truth[d] - 1.0));
        }
        // posterior D(50) per hotspot
        for h in 0..2 {
            let d50: Vec<f64> = post.samples.iter().map(|s| s[2*h] * 50f64.powf(s[2*h+1])).collect();
            let mean_d: f64 = d50.iter().sum::<f64>() / d50.len() as f64;
            let truth_d = truth[2*h] * 50f64.powf(truth[2*h+1]);
            println!("  D{}(50): mean {:.3} truth {:.3}", h + 1, mean_d, truth_d);
        }
    }
}
