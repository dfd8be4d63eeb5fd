fn main() {
    std::process::exit(dgpa::cli::run(std::env::args_os()));
}
