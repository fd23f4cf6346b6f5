use clap::Parser;

fn main() {
    let cli = imupose_pipeline::Cli::parse();
    if let Err(e) = imupose_pipeline::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
