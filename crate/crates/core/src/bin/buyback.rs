fn main() {
    std::process::exit(buyback::cli::run_from_args(std::env::args_os()));
}
