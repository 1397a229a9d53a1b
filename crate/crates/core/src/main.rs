use clap::Parser;

fn main() {
    let cli = ifs_lab::cli::Cli::parse();
    if let Some(threads) = cli.threads {
        if threads > 0 {
            // Ignore the error if a global pool already exists; thread
            // count never affects results, only wall time.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
    std::process::exit(ifs_lab::cli::run(&cli));
}
