fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HEADWAY_LAB_LOG", "info")).init();
    std::process::exit(headway_lab::cli::run(std::env::args_os()));
}
