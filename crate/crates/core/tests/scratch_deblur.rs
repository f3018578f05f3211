//! Temporary deblur diagnostics (run with --ignored), not part of CI.

use tmrf::experiments::*;
use tmrf::model::SquareDiskPhantom;

fn run_phantom(phantom: SquareDiskPhantom, label: &str) {
    let mut spec = ProblemSpec::preset("deblur").unwrap();
    spec.signal = SignalSpec::SquareDisk { params: phantom };
    let generated = build_problem(&spec).unwrap();
    let mut config = RunConfig::defaults_for(spec);
    config.n_samples = 1200;
    config.n_burnin = 800;
    config.n_thin = 3;
    config.seed = 5;
    let out = run_experiment(&generated, &config).unwrap();
    let row = |nm: &str| out.table.iter().find(|r| r.parameter == nm).unwrap().mean;
    println!(
        "{label:12} eps {:7.4}  nu {:8.4} tau {:10.4e} sigma {:10.4e}",
        out.summary.eps_rel.unwrap(),
        row("nu"),
        row("tau"),
        row("sigma_obs")
    );
}

#[test]
#[ignore]
fn phantom_scan() {
    run_phantom(SquareDiskPhantom::default(), "default");
    run_phantom(
        SquareDiskPhantom {
            square: (0.13, 0.50),
            square_value: 1.0,
            disk_center: (0.70, 0.68),
            disk_radius: 0.19,
            disk_value: 1.0,
        },
        "larger",
    );
    run_phantom(
        SquareDiskPhantom {
            square: (0.12, 0.55),
            square_value: 1.0,
            disk_center: (0.73, 0.70),
            disk_radius: 0.17,
            disk_value: 1.0,
        },
        "largest",
    );
}
