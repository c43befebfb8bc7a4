fn main() {
    std::process::exit(arterial_risk::cli::run(std::env::args_os()));
}
