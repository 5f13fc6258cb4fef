fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INVFORGE_LOG", "warn")).init();
    std::process::exit(invforge::cli::run_pipeline(std::env::args_os()));
}
