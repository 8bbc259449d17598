fn main() {
    std::process::exit(cca_subspace::cli::run(std::env::args_os()));
}
