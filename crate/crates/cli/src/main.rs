fn main() {
    std::process::exit(mhi_cli::run(std::env::args_os()));
}
