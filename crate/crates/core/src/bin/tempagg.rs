fn main() {
    std::process::exit(tempagg::cli::run(std::env::args_os()));
}
