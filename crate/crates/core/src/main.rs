fn main() {
    std::process::exit(oamtomo::cli::run(std::env::args_os()));
}
