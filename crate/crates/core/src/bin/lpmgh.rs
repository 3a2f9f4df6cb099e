fn main() {
    std::process::exit(lpmgh::cli::dispatch(std::env::args_os()));
}
