fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FOT_LOG", "warn")).init();
    std::process::exit(fot_core::cli::main_with_args(std::env::args_os()));
}
