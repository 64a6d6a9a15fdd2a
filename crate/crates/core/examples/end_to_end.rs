//! The full command pipeline driven from code: synthesize, extract, train,
//! score, fuse and evaluate, all inside a scratch directory.
//!
//! ```text
//! cargo run --release --example end_to_end
//! ```

use std::error::Error;

use antispoof::pipeline::{cmd_eval, cmd_extract, cmd_fuse, cmd_score, cmd_synth, cmd_train, Context, PipelineConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let config = PipelineConfig { seed: 1, ..PipelineConfig::default() };
    let ctx = Context::new(config, dir.path())?;

    print!("{}", cmd_synth(&ctx, None)?);
    for feature in ["cqcc", "lpcc"] {
        print!("{}", cmd_extract(&ctx, feature, &[], None, None)?);
    }
    let (dev, eval) = (ctx.dev_protocol(), ctx.eval_protocol());
    let systems = ["cqcc-gmm", "lpcc-ivec"];
    for system in systems {
        print!("{}", cmd_train(&ctx, system, None)?);
        cmd_score(&ctx, system, Some(&dev), None)?;
        cmd_score(&ctx, system, Some(&eval), None)?;
        print!("{system}: {}", cmd_eval(&ctx, &ctx.score_path(system, &eval), None, None)?);
    }

    let scores = |p: &std::path::Path| systems.map(|s| ctx.score_path(s, p));
    let model = ctx.work_dir().join("models/fusion.rsmd");
    let fused_dev = ctx.work_dir().join("scores/fused_dev.txt");
    let fused_eval = ctx.work_dir().join("scores/fused_eval.txt");
    cmd_fuse(&ctx, &scores(&dev), Some(&dev), None, Some(&model), Some(&fused_dev))?;
    cmd_fuse(&ctx, &scores(&eval), Some(&eval), Some(&model), None, Some(&fused_eval))?;
    print!("fused: {}", cmd_eval(&ctx, &fused_eval, None, None)?);
    Ok(())
}
