fn main() {
    std::process::exit(diffreason::cli::run(std::env::args_os()));
}
