use clap::Parser;

use downscale_cli::args::Cli;
use downscale_cli::commands::{configure_threads, run};

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let threads = std::env::var("DOWNSCALE_THREADS").ok();
    let result = configure_threads(threads.as_deref()).and_then(|()| run(&cli.command));
    if let Err(e) = result {
        let mut msg = format!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            msg.push_str(&format!("\n  caused by: {s}"));
            source = s.source();
        }
        eprintln!("{msg}");
        std::process::exit(e.exit_code());
    }
}
