fn main() {
    std::process::exit(infogain_core::cli::dispatch(std::env::args_os()));
}
