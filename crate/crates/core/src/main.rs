fn main() {
    std::process::exit(sirenlab::cli::run(std::env::args_os()));
}
