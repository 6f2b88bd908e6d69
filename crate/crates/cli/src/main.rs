use clap::Parser;

fn main() {
    let cli = cab_cli::Cli::parse();
    if let Err(e) = cab_cli::run(cli) {
        eprintln!("cab: {e}");
        if matches!(e, cab_cli::CliError::Usage(_)) {
            eprintln!("run `cab --help` for usage");
        }
        std::process::exit(e.exit_code());
    }
}
