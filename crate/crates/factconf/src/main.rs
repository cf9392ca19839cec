fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FC_LOG", "info")).init();
    std::process::exit(factconf::cli::dispatch(std::env::args_os()));
}
