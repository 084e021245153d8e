fn main() {
    std::process::exit(hrm_core::cli::run(std::env::args_os()));
}
