fn main() {
    std::process::exit(spectator_core::cli::run(std::env::args_os()));
}
