fn main() {
    std::process::exit(gvf_core::cli::run(std::env::args_os()));
}
