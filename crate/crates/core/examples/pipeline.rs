//! The command-line stages driven from code with a config file.
//!
//! ```text
//! cargo run --release --example pipeline -- crates/core/fixtures/quick.toml out/quick
//! ```

use leno::io::PipelineConfig;
use leno::pipeline::{run, Command, Context};

fn main() -> leno::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args.next().unwrap_or_else(|| "fixtures/quick.toml".into());
    let out = args.next().map(Into::into);
    let ctx = Context::new(PipelineConfig::load(&config)?, None, out)?;
    for cmd in [
        Command::Eigs,
        Command::Simulate,
        Command::Train,
        Command::Predict,
        Command::Transfer,
        Command::Treat,
        Command::Report,
    ] {
        let result = run(cmd, &ctx)?;
        println!("[{}] {} files", cmd.name(), result.files.len());
        for line in result.summary {
            println!("  {line}");
        }
    }
    Ok(())
}
