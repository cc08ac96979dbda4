fn main() {
    std::process::exit(prodspec::cli::run(std::env::args_os()));
}
