fn main() {
    std::process::exit(ednet::cli::run(std::env::args_os()));
}
