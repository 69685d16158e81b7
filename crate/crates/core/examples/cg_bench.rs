//! The CG benchmark suites, summarised per case.

use nghf::bench::{run_bench, BenchConfig};
use std::collections::BTreeMap;

fn main() -> nghf::Result<()> {
    let cfg = BenchConfig::from_text("suite = all\nspd_trials = 2\nstab_trials = 10\n")?;
    let rows = run_bench(&cfg)?;
    // Final iterate of the first trial of every case.
    let mut last: BTreeMap<(&str, &str), &nghf::bench::BenchRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.trial == 0) {
        let e = last.entry((&r.suite, &r.case)).or_insert(r);
        if r.iteration >= e.iteration {
            *e = r;
        }
    }
    println!("{} rows", rows.len());
    println!("suite      case                            iters  residual     oracle error");
    for ((suite, case), r) in last {
        let err = r.oracle_err.map_or("-".to_string(), |e| format!("{e:.3e}"));
        println!(
            "{suite:<10} {case:<30} {:>6}  {:.3e}    {err}",
            r.iteration, r.residual_norm
        );
    }
    Ok(())
}
