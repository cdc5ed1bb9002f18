fn main() {
    std::process::exit(conecap::cli::run(std::env::args_os()));
}
