fn main() {
    std::process::exit(clipcert::cli::run(std::env::args_os()));
}
