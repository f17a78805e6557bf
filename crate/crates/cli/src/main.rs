use std::io::ErrorKind;

use clap::Parser;
use tracing_subscriber::EnvFilter;

fn broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let io = c.downcast_ref::<std::io::Error>().or(match c.downcast_ref::<fairprobe::Error>() {
            Some(fairprobe::Error::Io(io)) => Some(io),
            _ => None,
        });
        io.is_some_and(|io| io.kind() == ErrorKind::BrokenPipe)
    })
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match fairprobe_cli::run(fairprobe_cli::Cli::parse()) {
        Err(e) if broken_pipe(&e) => Ok(()),
        other => other,
    }
}
