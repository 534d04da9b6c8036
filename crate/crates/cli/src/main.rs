use clap::Parser;
use ixframe_cli::cli::Cli;

fn main() {
    // Internal failures print one line, never a backtrace.
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| info.payload().downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        eprintln!("ixframe: internal error: {msg}");
    }));
    let cli = Cli::parse();
    if let Err(e) = ixframe_cli::run(cli) {
        eprintln!("ixframe: {e}");
        std::process::exit(1);
    }
}
