fn main() {
    std::process::exit(nlds::cli::run(std::env::args_os()));
}
