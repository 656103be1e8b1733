use std::time::Instant;
use teichflow::expcli::{build_experiment, Config};
use teichflow::flow::{self, FlowParams};

fn main() {
    let mut cfg = Config::default();
    cfg.mesh.level = Some(3);
    let exp = build_experiment(&cfg).unwrap();
    let mesh = &exp.surface.mesh;

    // (c) kappa sweep at acceptance parameters
    let mut p = FlowParams::default();
    p.dt = 0.001; p.t_end = 1.0;
    let t0 = Instant::now();
    let rep = flow::kappa_sweep(mesh, &exp.surface.generators, &exp.init, &[4.0, 8.0, 16.0, 32.0], 0.1, 32, &p, &exp.target).unwrap();
    println!("(c) kappa sweep in {:?}: slope {:.3} dgdt {:.3e}", t0.elapsed(), rep.tension_slope, rep.limit_dgdt_rel_err);
    for e in &rep.entries {
        println!("    k={}: maxT2={:.3e} dc0_next={:.3e} dc0_lim={:.3e} map_lim={:.3e}", e.kappa, e.max_tension_after_eps, e.sup_dc0_to_next, e.sup_dc0_to_limit, e.sup_map_c0_to_limit);
    }
}
