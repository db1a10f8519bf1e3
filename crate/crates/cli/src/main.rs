fn main() {
    std::process::exit(c2al_cli::run(std::env::args_os()));
}
