use clap::Parser;
use popgrid_cli::{configure_threads, run, Cli, CliError};

fn main() {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| run(cli));
    if let Err(e) = result {
        match &e {
            CliError::Usage(msg) => eprintln!("popgrid: usage error: {msg}"),
            CliError::Stage { .. } => eprintln!("popgrid: {e:#}"),
        }
        std::process::exit(e.exit_code());
    }
}
