//! scratch pilot harness (not shipped)
use netprice::config;
use netprice::experiments::{train_single, Dataset, cell_split};
use netprice::graph::induced_subgraph;
use netprice::market;
use netprice::policy::Architecture;
use netprice::seeding;
use netprice::training::{estimate_jsd, probe_heldout_accuracy, select_lowest_gap_with_profit_floor, policy_from_candidate, TrainFailure};
use netprice::graph::NodeMask;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let phi: f64 = args[1].parse().unwrap();
    let scale: f64 = args[2].parse().unwrap();
    let lambda: f64 = args[3].parse().unwrap();
    let seeds: Vec<u64> = args[4].split(',').map(|s| s.parse().unwrap()).collect();

    let mut cfg = config::benchmark();
    cfg.train.phi = phi;
    cfg.train.adv_lr_scale = scale;
    cfg.train.lambda = lambda;
    let (ds, _) = Dataset::from_config(&cfg).unwrap();

    for seed in seeds {
        let t0 = std::time::Instant::now();
        let (policy, sel_epoch, feasible) = match train_single(&ds, &cfg, Architecture::Gcn, seed) {
            Ok(o) => (o.policy, o.selected_epoch, true),
            Err(TrainFailure::Infeasible { run, config, p_max, .. }) => {
                let idx = select_lowest_gap_with_profit_floor(&run.pool, 0.95).unwrap();
                (policy_from_candidate(&config, p_max, &run.pool[idx]).unwrap(), run.pool[idx].epoch, false)
            }
            Err(_) => panic!("train error"),
        };
        // probe on training subgraph reps
        let split = cell_split(ds.graph.n(), &cfg, seed).unwrap();
        let (tg, tmap) = induced_subgraph(&ds.graph, &split.train).unwrap();
        let tt = ds.table.subset(&tmap);
        let reps = policy.representations(tt.features(), &tg).unwrap();
        let acc = probe_heldout_accuracy(&reps, tt.s(), seeding::derive_seed(seed, "pilot.acc")).unwrap();
        let jsd = estimate_jsd(&reps, tt.s(), seeding::derive_seed(seed, "pilot.jsd")).unwrap().jsd;
        // eval metrics on train+test
        let (eg, emap) = induced_subgraph(&ds.graph, &split.evaluation()).unwrap();
        let et = ds.table.subset(&emap);
        let prices = policy.assign_prices(et.features(), &eg).unwrap();
        let model = cfg.demand_model(&ds.table).unwrap();
        let m = market::metrics(&eg, &et, &model, &cfg.perception().unwrap(), &cfg.market().unwrap(), &prices, &NodeMask::full(eg.n())).unwrap();
        println!("phi={phi} scale={scale} lambda={lambda} seed={seed} feas={} ep={} pi={:.2} pdiff={:.3} eta={:.3} delta={:.2} acc={:.3} jsd={:.3} [{:.0}s]",
            u8::from(feasible), sel_epoch, m.pi_avg, m.p_diff, m.eta_avg, m.delta_avg, acc, jsd, t0.elapsed().as_secs_f64());
    }
}
