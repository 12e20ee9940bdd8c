fn main() {
    std::process::exit(reeftip::cli::run(std::env::args_os()));
}
