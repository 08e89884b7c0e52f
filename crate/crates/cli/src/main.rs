fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AGGNE_LOG", "off")).init();
    std::process::exit(aggne_cli::cli::main_with_args(std::env::args_os()));
}
