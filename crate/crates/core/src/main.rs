fn main() {
    std::process::exit(copula_fusion::cli::run_from(std::env::args_os()));
}
