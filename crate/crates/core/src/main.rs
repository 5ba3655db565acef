fn main() {
    std::process::exit(etr_pcp::cli::run_args(std::env::args_os()));
}
