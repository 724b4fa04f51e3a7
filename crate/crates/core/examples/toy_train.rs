//! Trains (or resumes) the toy reference model into the shared cache used by
//! the acceptance suite.
use std::path::PathBuf;

fn main() -> larm::Result<()> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("target/larm-cache"));
    let (model, cfg) = larm::pipeline::toy_setup();
    let dir = larm::pipeline::run_dir(&root, &model, &cfg);
    println!("{}", dir.display());
    larm::pipeline::train_run(&dir, model, &cfg, None, false)?;
    Ok(())
}
