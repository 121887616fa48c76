fn main() {
    std::process::exit(depthforge::cli::dispatch(std::env::args_os()));
}
