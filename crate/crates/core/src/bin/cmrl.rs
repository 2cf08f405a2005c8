fn main() {
    env_logger::Builder::from_default_env()
        .format_timestamp(None)
        .init();
    std::process::exit(cmrl::cli::run(std::env::args()));
}
