use anyhow::Result;
use clap::Args;
use greyfuse_core::eval::{cmc_map, distance_matrix, read_features, EvalProtocol};
use greyfuse_core::model::{branch_submatrix, Branch};
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::config::RunConfig;

/// Score query features against gallery features (single-query CMC/mAP).
#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Query feature file.
    #[arg(long)]
    pub query: PathBuf,
    /// Gallery feature file.
    #[arg(long)]
    pub gallery: PathBuf,
    /// Additionally score every branch sub-feature combination
    /// (requires full global features).
    #[arg(long)]
    pub ablation: bool,
    /// CMC curve length (overrides eval.max_rank).
    #[arg(long = "max-rank")]
    pub max_rank: Option<usize>,
}

const COMBOS: [(&str, &[Branch]); 7] = [
    ("grey", &[Branch::Grey]),
    ("rgb", &[Branch::Rgb]),
    ("joint", &[Branch::Joint]),
    ("grey+rgb", &[Branch::Grey, Branch::Rgb]),
    ("grey+joint", &[Branch::Grey, Branch::Joint]),
    ("rgb+joint", &[Branch::Rgb, Branch::Joint]),
    ("grey+rgb+joint", &[Branch::Grey, Branch::Rgb, Branch::Joint]),
];

pub fn run_evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let (q, q_recs) = read_features(&args.query)?;
    let (g, g_recs) = read_features(&args.gallery)?;
    let protocol = EvalProtocol {
        max_rank: args.max_rank.unwrap_or(cfg.eval.max_rank),
    };

    let dist = distance_matrix(q.view(), g.view())?;
    let result = cmc_map(&dist, &q_recs, &g_recs, &protocol)?;
    let mut report = result.report();

    if args.ablation {
        let mut net_cfg = cfg.network.clone();
        if net_cfg.num_classes == 0 {
            net_cfg.num_classes = 1; // classifier width is irrelevant here
        }
        writeln!(report, "\nbranch ablation (mAP / rank-1):")?;
        for (name, branches) in COMBOS {
            let qs = branch_submatrix(&q.view(), &net_cfg, branches)?;
            let gs = branch_submatrix(&g.view(), &net_cfg, branches)?;
            let d = distance_matrix(qs.view(), gs.view())?;
            let r = cmc_map(&d, &q_recs, &g_recs, &protocol)?;
            writeln!(report, "  {name:<16} {:.4}  {:.4}", r.map, r.rank(1))?;
        }
    }

    print!("{report}");
    if let Some(dir) = cfg.out_dir.as_deref() {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("report.txt");
        std::fs::write(&path, &report)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
