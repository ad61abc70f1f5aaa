fn main() {
    std::process::exit(interfere::cli::dispatch(std::env::args_os()));
}
