fn main() {
    std::process::exit(kfim::cli::run(std::env::args_os()));
}
